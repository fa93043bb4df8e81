#include <algorithm>

#include "binio.hpp"
#include "whc/error.hpp"
#include "whc/ingest.hpp"
#include "whc/models.hpp"

namespace whc {

namespace {

constexpr std::uint32_t kWeightsVersion = 1;

struct Entry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

std::vector<std::uint32_t> dims_of(const nn::Param<float>& p) {
  const nn::Shape& s = p.value.shape();
  if (p.rank == 1) return {std::uint32_t(s.n)};
  return {std::uint32_t(s.n), std::uint32_t(s.c), std::uint32_t(s.h), std::uint32_t(s.w)};
}

std::string dims_str(const std::vector<std::uint32_t>& d) {
  std::string s = "[";
  for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "," : "") + std::to_string(d[i]);
  return s + "]";
}

std::pair<Variant, std::vector<Entry>> parse(const std::string& bytes) {
  binio::Reader in(bytes, "WHCW");
  in.expect_magic("WHCW");
  const std::uint32_t version = in.u32();
  if (version != kWeightsVersion) throw FormatError("WHCW: unsupported version " + std::to_string(version));
  const std::uint8_t tag = in.u8();
  if (tag > 3) throw FormatError("WHCW: unknown variant tag " + std::to_string(tag));
  const std::uint32_t count = in.u32();
  std::vector<Entry> entries;
  for (std::uint32_t e = 0; e < count; ++e) {
    Entry entry;
    entry.name = in.str(in.u32());
    const std::uint32_t rank = in.u32();
    if (rank == 0 || rank > 8) throw FormatError("WHCW: entry " + entry.name + " has rank " + std::to_string(rank));
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      entry.dims.push_back(in.u32());
      n *= entry.dims.back();
    }
    if (n * 4 > in.remaining()) throw FormatError("WHCW: truncated data for " + entry.name);
    entry.data.resize(std::size_t(n));
    for (float& v : entry.data) v = in.f32();
    entries.push_back(std::move(entry));
  }
  if (in.remaining() != 0) throw FormatError("WHCW: trailing bytes after last entry");
  return {Variant(tag), std::move(entries)};
}

// Validates every entry against the model before copying anything.
void apply(Model& model, const std::vector<Entry>& entries, bool frontend_only) {
  std::vector<std::string> problems;
  std::vector<std::pair<nn::Param<float>*, const Entry*>> plan;
  for (const Entry& e : entries) {
    if (frontend_only && !e.name.starts_with("frontend.")) continue;
    const nn::Param<float>* found = model.params().find(e.name);
    if (!found) {
      problems.push_back(e.name + " (not in " + std::string(variant_name(model.variant())) + ")");
      continue;
    }
    auto& p = model.params().get(e.name);
    if (dims_of(p) != e.dims) {
      problems.push_back(e.name + " (file " + dims_str(e.dims) + ", model " + dims_str(dims_of(p)) + ")");
      continue;
    }
    plan.emplace_back(&p, &e);
  }
  for (const auto& p : model.params().all()) {
    if (frontend_only && !p.name.starts_with("frontend.")) continue;
    const bool present = std::any_of(entries.begin(), entries.end(),
                                     [&](const Entry& e) { return e.name == p.name; });
    if (!present) problems.push_back(p.name + " (missing from file)");
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match model:";
    for (const auto& s : problems) msg += " " + s + ";";
    throw FormatError(msg);
  }
  for (auto& [p, e] : plan) std::copy(e->data.begin(), e->data.end(), p->value.data());
}

}  // namespace

std::string encode_weights(const Model& model) {
  std::string out = "WHCW";
  binio::put_u32(out, kWeightsVersion);
  out.push_back(char(std::uint8_t(model.variant())));
  binio::put_u32(out, std::uint32_t(model.params().all().size()));
  for (const auto& p : model.params().all()) {
    binio::put_u32(out, std::uint32_t(p.name.size()));
    out += p.name;
    const auto dims = dims_of(p);
    binio::put_u32(out, std::uint32_t(dims.size()));
    for (auto d : dims) binio::put_u32(out, d);
    for (float v : p.value.vec()) binio::put_f32(out, v);
  }
  return out;
}

void decode_weights(Model& model, const std::string& bytes) {
  auto [variant, entries] = parse(bytes);
  if (variant != model.variant())
    throw FormatError("checkpoint holds " + std::string(variant_name(variant)) + " weights, model is " +
                      std::string(variant_name(model.variant())));
  apply(model, entries, false);
}

void save_weights(const Model& model, const std::filesystem::path& path) {
  write_text_file(path, encode_weights(model));
}

void load_weights(Model& model, const std::filesystem::path& path) {
  try {
    decode_weights(model, read_text_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Variant checkpoint_variant(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  binio::Reader in(bytes, path.string());
  in.expect_magic("WHCW");
  const std::uint32_t version = in.u32();
  if (version != kWeightsVersion) throw FormatError(path.string() + ": unsupported WHCW version");
  const std::uint8_t tag = in.u8();
  if (tag > 3) throw FormatError(path.string() + ": unknown variant tag " + std::to_string(tag));
  return Variant(tag);
}

void load_frontend_weights(Model& model, const std::filesystem::path& path) {
  try {
    auto parsed = parse(read_text_file(path));
    apply(model, parsed.second, true);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace whc
