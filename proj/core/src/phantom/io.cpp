// SPDX-License-Identifier: Apache-2.0
#include "bline/phantom/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <sstream>

namespace bline {

// --- PGM ---------------------------------------------------------------------

std::string write_pgm(const Image& image, std::string_view comment) {
  if (image.width == 0 || image.height == 0) throw std::invalid_argument("write_pgm: empty image");
  if (comment.find('\n') != std::string_view::npos) throw std::invalid_argument("write_pgm: multi-line comment");
  std::string out = "P5\n";
  if (!comment.empty()) {
    out += "# ";
    out += comment;
    out += '\n';
  }
  out += std::to_string(image.width) + ' ' + std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.pixels.size());
  for (double v : image.pixels) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  return out;
}

namespace {

class HeaderScanner {
 public:
  explicit HeaderScanner(std::string_view bytes) : bytes_(bytes) {}

  std::size_t number() {
    skip_space_and_comments();
    std::size_t value = 0;
    const auto* begin = bytes_.data() + pos_;
    const auto* end = bytes_.data() + bytes_.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr == begin) throw FileFormatError("malformed PGM header");
    pos_ += static_cast<std::size_t>(ptr - begin);
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw FileFormatError("malformed PGM header");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 2;
};

}  // namespace

Image read_pgm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes.substr(0, 2) != "P5") throw FileFormatError("not a binary PGM (missing P5 magic)");
  HeaderScanner scan(bytes);
  const std::size_t w = scan.number();
  const std::size_t h = scan.number();
  const std::size_t maxval = scan.number();
  if (w == 0 || h == 0) throw FileFormatError("PGM extents must be positive");
  if (maxval == 0 || maxval > 255) throw FileFormatError("unsupported PGM maxval " + std::to_string(maxval));
  const std::size_t offset = scan.raster_offset();
  if (bytes.size() - offset < w * h) throw FileFormatError("PGM payload truncated");
  if (bytes.size() - offset > w * h) throw FileFormatError("PGM has trailing bytes");
  Image img(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    img.pixels[i] = static_cast<double>(static_cast<unsigned char>(bytes[offset + i])) / static_cast<double>(maxval);
  }
  return img;
}

void save_pgm(const std::filesystem::path& path, const Image& image, std::string_view comment) {
  write_file(path, write_pgm(image, comment));
}

Image load_pgm(const std::filesystem::path& path) { return read_pgm(read_file(path)); }

// --- Annotations ---------------------------------------------------------------

namespace {

std::string format_coord(double v) {
  if (v != std::round(v)) throw std::invalid_argument("native annotations hold integer coordinates, got " + std::to_string(v));
  return std::to_string(static_cast<long long>(v));
}

// Shortest representation that parses back to the same double.
std::string format_real(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_real(std::string_view s, const std::string& line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FileFormatError("malformed annotation line: " + line);
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

}  // namespace

std::string write_annotations(const std::vector<AnnotationRecord>& records, const std::vector<std::string>& header) {
  std::string out;
  for (const auto& h : header) out += "# " + h + "\n";
  for (const auto& rec : records) {
    if (rec.image_path.empty() || rec.image_path.find_first_of(" \t\n") != std::string::npos) {
      throw std::invalid_argument("image path must be non-empty and free of whitespace: '" + rec.image_path + "'");
    }
    out += rec.image_path;
    for (const auto& ab : rec.boxes) {
      if (!ab.box.valid()) throw DegenerateBoxError("cannot write degenerate box " + to_string(ab.box));
      out += ' ';
      out += format_coord(ab.box.x1) + ',' + format_coord(ab.box.y1) + ',' + format_coord(ab.box.x2) + ',' +
             format_coord(ab.box.y2) + ",bline";
      if (ab.score) out += ',' + format_real(*ab.score);
    }
    out += '\n';
  }
  return out;
}

std::vector<AnnotationRecord> read_annotations(std::string_view text, std::optional<double> image_width,
                                               std::optional<double> image_height) {
  std::vector<AnnotationRecord> records;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    AnnotationRecord rec;
    fields >> rec.image_path;
    std::string token;
    while (fields >> token) {
      const auto parts = split(token, ',');
      if (parts.size() != 5 && parts.size() != 6) throw FileFormatError("malformed annotation line: " + line);
      if (parts[4] != "bline") throw FileFormatError("unknown label '" + std::string(parts[4]) + "' in: " + line);
      AnnotatedBox ab;
      ab.box = Box{parse_real(parts[0], line), parse_real(parts[1], line), parse_real(parts[2], line),
                   parse_real(parts[3], line)};
      if (!ab.box.valid()) throw FileFormatError("degenerate box in: " + line);
      if ((image_width && ab.box.x2 > *image_width) || (image_height && ab.box.y2 > *image_height) || ab.box.x1 < 0 ||
          ab.box.y1 < 0) {
        throw FileFormatError("box out of image bounds in: " + line);
      }
      if (parts.size() == 6) ab.score = parse_real(parts[5], line);
      rec.boxes.push_back(ab);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::string to_coco_json(const std::vector<AnnotationRecord>& records) {
  nlohmann::ordered_json root;
  root["images"] = nlohmann::ordered_json::array();
  root["annotations"] = nlohmann::ordered_json::array();
  std::size_t ann_id = 1;
  for (std::size_t i = 0; i < records.size(); ++i) {
    root["images"].push_back({{"id", i}, {"file_name", records[i].image_path}});
    for (const auto& ab : records[i].boxes) {
      nlohmann::ordered_json a;
      a["id"] = ann_id++;
      a["image_id"] = i;
      a["category_id"] = 1;
      a["bbox"] = {ab.box.x1, ab.box.y1, ab.box.width(), ab.box.height()};
      a["area"] = ab.box.area();
      a["iscrowd"] = 0;
      if (ab.score) a["score"] = *ab.score;
      root["annotations"].push_back(std::move(a));
    }
  }
  root["categories"] = nlohmann::ordered_json::array({{{"id", 1}, {"name", "bline"}}});
  return root.dump(1) + "\n";
}

std::vector<AnnotationRecord> from_coco_json(std::string_view json) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw FileFormatError(std::string("malformed COCO json: ") + e.what());
  }
  try {
    std::vector<AnnotationRecord> records(root.at("images").size());
    for (const auto& img : root.at("images")) {
      const auto id = img.at("id").get<std::size_t>();
      if (id >= records.size()) throw FileFormatError("COCO image id out of range");
      records[id].image_path = img.at("file_name").get<std::string>();
    }
    for (const auto& a : root.at("annotations")) {
      const auto id = a.at("image_id").get<std::size_t>();
      if (id >= records.size()) throw FileFormatError("COCO annotation refers to unknown image");
      const auto bbox = a.at("bbox").get<std::vector<double>>();
      if (bbox.size() != 4) throw FileFormatError("COCO bbox must have 4 entries");
      AnnotatedBox ab;
      ab.box = Box{bbox[0], bbox[1], bbox[0] + bbox[2], bbox[1] + bbox[3]};
      if (a.contains("score")) ab.score = a.at("score").get<double>();
      records[id].boxes.push_back(ab);
    }
    return records;
  } catch (const nlohmann::json::exception& e) {
    throw FileFormatError(std::string("malformed COCO json: ") + e.what());
  }
}

std::string to_coco_results_json(const std::vector<AnnotationRecord>& records) {
  auto results = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (const auto& ab : records[i].boxes) {
      nlohmann::ordered_json r;
      r["image_id"] = i;
      r["category_id"] = 1;
      r["bbox"] = {ab.box.x1, ab.box.y1, ab.box.width(), ab.box.height()};
      r["score"] = ab.score.value_or(1.0);
      results.push_back(std::move(r));
    }
  }
  return results.dump(1) + "\n";
}

// --- Files ---------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace bline
