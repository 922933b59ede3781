// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "bline/ndgrad/params.hpp"

namespace bline::nd {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kCheckpointMagic = "LUSB";
inline constexpr std::uint16_t kCheckpointVersion = 1;

// Layout, all integers little-endian:
//   "LUSB" | u16 version | u32 count |
//   count x ( u32 name_len | name bytes (UTF-8) | u32 rank | rank x u32 extent |
//             prod(extents) x f32 value )
// Values are narrowed to 32-bit floats on write.
std::string encode_checkpoint(const ParameterStore& params);
ParameterStore decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params);
ParameterStore load_checkpoint(const std::filesystem::path& path);

/// Rounds every value to the nearest 32-bit float, so in-memory parameters
/// match what a save/load cycle would produce.
void round_to_float(ParameterStore& params);

}  // namespace bline::nd
