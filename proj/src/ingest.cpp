#include "whc/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "whc/error.hpp"

namespace whc {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_int(std::string_view s, int& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Splits one CSV record. Double quotes enclose fields containing commas; a
// doubled quote inside a quoted field is a literal quote.
std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (quoted) throw ParseError("line " + std::to_string(line_no) + ": unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

BBox parse_bbox_cell(std::string_view cell, std::size_t line_no) {
  auto fail = [&](const std::string& why) {
    return ParseError("line " + std::to_string(line_no) + ": malformed bbox '" + std::string(cell) +
                      "': " + why);
  };
  std::string_view s = trim(cell);
  if (s.size() < 2 || s.front() != '[' || s.back() != ']') throw fail("expected [x, y, w, h]");
  s = s.substr(1, s.size() - 2);
  std::array<double, 4> v{};
  std::size_t count = 0;
  while (true) {
    const auto comma = s.find(',');
    const std::string_view item = s.substr(0, comma);
    if (count == 4) throw fail("more than four values");
    if (!parse_double(item, v[count])) throw fail("non-numeric value '" + std::string(trim(item)) + "'");
    ++count;
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  if (count != 4) throw fail("expected four values");
  if (!(v[2] > 0.0) || !(v[3] > 0.0)) throw fail("width and height must be positive");
  return BBox{v[0], v[1], v[2], v[3]};
}

}  // namespace

Dot bbox_centroid(const BBox& b) { return Dot{b.x + b.w / 2.0, b.y + b.h / 2.0}; }

BBox clip_box(const BBox& b, int width, int height) {
  const double x0 = std::max(0.0, b.x);
  const double y0 = std::max(0.0, b.y);
  const double x1 = std::min(double(width), b.x + b.w);
  const double y1 = std::min(double(height), b.y + b.h);
  if (!(x1 > x0) || !(y1 > y0)) throw InvalidArgument("bounding box lies outside the image frame");
  if (x0 == b.x && y0 == b.y && x1 == b.x + b.w && y1 == b.y + b.h) return b;
  return BBox{x0, y0, x1 - x0, y1 - y0};
}

AnnotationIndex parse_annotations(std::string_view csv_text) {
  AnnotationIndex out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  int col_id = -1, col_w = -1, col_h = -1, col_bbox = -1;
  bool have_header = false;

  while (pos <= csv_text.size()) {
    const auto nl = csv_text.find('\n', pos);
    std::string_view line = csv_text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? csv_text.size() + 1 : nl + 1;
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
    if (trim(line).empty()) continue;

    const auto fields = split_csv_line(line, line_no);
    if (!have_header) {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        const auto name = trim(fields[i]);
        if (name == "image_id") col_id = int(i);
        else if (name == "width") col_w = int(i);
        else if (name == "height") col_h = int(i);
        else if (name == "bbox") col_bbox = int(i);
      }
      if (col_id < 0 || col_w < 0 || col_h < 0 || col_bbox < 0)
        throw ParseError("line " + std::to_string(line_no) +
                         ": header must name image_id, width, height and bbox columns");
      have_header = true;
      continue;
    }

    const int needed = std::max({col_id, col_w, col_h, col_bbox});
    if (int(fields.size()) <= needed)
      throw ParseError("line " + std::to_string(line_no) + ": expected at least " +
                       std::to_string(needed + 1) + " fields, got " + std::to_string(fields.size()));

    const std::string id(trim(fields[col_id]));
    if (id.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty image_id");
    int width = 0, height = 0;
    if (!parse_int(fields[col_w], width) || width <= 0)
      throw ParseError("line " + std::to_string(line_no) + ": non-numeric or non-positive width '" +
                       fields[col_w] + "'");
    if (!parse_int(fields[col_h], height) || height <= 0)
      throw ParseError("line " + std::to_string(line_no) + ": non-numeric or non-positive height '" +
                       fields[col_h] + "'");
    const BBox raw = parse_bbox_cell(fields[col_bbox], line_no);

    auto [it, inserted] = out.try_emplace(id);
    AnnotationSet& set = it->second;
    if (inserted) {
      set.image_id = id;
      set.width = width;
      set.height = height;
    } else if (set.width != width || set.height != height) {
      throw ParseError("line " + std::to_string(line_no) + ": image '" + id +
                       "' listed with conflicting dimensions");
    }
    BBox box;
    try {
      box = clip_box(raw, width, height);
    } catch (const InvalidArgument&) {
      throw ParseError("line " + std::to_string(line_no) + ": bbox lies entirely outside the " +
                       std::to_string(width) + "x" + std::to_string(height) + " image");
    }
    set.boxes.push_back(box);
    set.dots.push_back(bbox_centroid(box));
  }
  return out;
}

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, ptr);
  // Keep a decimal point so the value reads back as a real literal.
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string serialize_annotations(const AnnotationIndex& index) {
  std::string out = "image_id,width,height,bbox,source\n";
  for (const auto& [id, set] : index) {
    for (const BBox& b : set.boxes) {
      out += id + "," + std::to_string(set.width) + "," + std::to_string(set.height) + ",\"[" +
             format_real(b.x) + ", " + format_real(b.y) + ", " + format_real(b.w) + ", " +
             format_real(b.h) + "]\",whc\n";
    }
  }
  return out;
}

DatasetSplit split_dataset(std::vector<std::string> patch_ids, const SplitRatios& ratios,
                           std::uint64_t seed) {
  if (patch_ids.empty()) throw InvalidArgument("split_dataset: empty patch list");
  if (!(ratios.train > 0.0) || !(ratios.val > 0.0) || !(ratios.test > 0.0))
    throw InvalidArgument("split_dataset: ratios must be positive");
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw InvalidArgument("split_dataset: ratios must sum to 1");

  const std::size_t n = patch_ids.size();
  std::mt19937_64 rng(seed);
  std::shuffle(patch_ids.begin(), patch_ids.end(), rng);

  const auto n_val = std::size_t(std::llround(ratios.val * double(n)));
  const auto n_test = std::size_t(std::llround(ratios.test * double(n)));
  if (n_val + n_test > n) throw InvalidArgument("split_dataset: too few patches for the requested ratios");

  DatasetSplit split;
  split.seed = seed;
  const auto begin = patch_ids.begin();
  const auto train_end = begin + std::ptrdiff_t(n - n_val - n_test);
  const auto val_end = train_end + std::ptrdiff_t(n_val);
  split.train.assign(begin, train_end);
  split.val.assign(train_end, val_end);
  split.test.assign(val_end, patch_ids.end());
  return split;
}

std::string format_dots_csv(const std::vector<Dot>& dots) {
  std::string out;
  for (const Dot& d : dots) out += format_real(d.cx) + "," + format_real(d.cy) + "\n";
  return out;
}

std::vector<Dot> parse_dots_csv(std::string_view text) {
  std::vector<Dot> dots;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string_view line = trim(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    Dot d;
    if (comma == std::string_view::npos || !parse_double(line.substr(0, comma), d.cx) ||
        !parse_double(line.substr(comma + 1), d.cy))
      throw ParseError("dots line " + std::to_string(line_no) + ": expected 'cx,cy'");
    dots.push_back(d);
  }
  return dots;
}

std::vector<Dot> read_dots_file(const std::filesystem::path& path) {
  try {
    return parse_dots_csv(read_text_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_dots_file(const std::filesystem::path& path, const std::vector<Dot>& dots) {
  write_text_file(path, format_dots_csv(dots));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), std::streamsize(text.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace whc
