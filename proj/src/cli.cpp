#include "whc/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <iostream>
#include <set>
#include <thread>

#include "whc/augment.hpp"
#include "whc/error.hpp"
#include "whc/report.hpp"

namespace whc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "1.0.0";

void reject_unknown(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.contains(key)) throw ConfigError("unknown key '" + (where.empty() ? "" : where + ".") + key + "'");
}

template <typename T>
T get_or(const json& obj, const std::string& where, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) throw ConfigError("");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const ConfigError&) {
    throw ConfigError("key '" + where + "." + key + "' has the wrong type");
  }
}

fs::path resolve(const std::string& p, const fs::path& base) {
  if (p.empty()) return {};
  fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

const char* init_name(InitScheme s) { return s == InitScheme::He ? "he" : "gaussian"; }

}  // namespace

RunConfig parse_run_config(const json& doc, const fs::path& base_dir) {
  reject_unknown(doc, "", {"data", "kernel", "train", "eval", "output"});
  const json empty = json::object();
  const json& data = doc.contains("data") ? doc.at("data") : empty;
  const json& kernel = doc.contains("kernel") ? doc.at("kernel") : empty;
  const json& train = doc.contains("train") ? doc.at("train") : empty;
  const json& eval = doc.contains("eval") ? doc.at("eval") : empty;
  const json& output = doc.contains("output") ? doc.at("output") : empty;
  reject_unknown(data, "data", {"annotations", "images_dir", "train", "val", "pretrained_frontend", "split", "synth"});
  reject_unknown(kernel, "kernel", {"beta", "k", "sigma_fallback", "truncation_radius"});
  reject_unknown(train, "train",
                 {"variant", "lr", "epochs", "batch_size", "seed", "determinism", "init", "init_std"});
  reject_unknown(eval, "eval", {"test", "whole", "threads"});
  reject_unknown(output, "output", {"dir"});

  RunConfig c;
  c.annotations = resolve(get_or<std::string>(data, "data", "annotations", ""), base_dir);
  c.images_dir = resolve(get_or<std::string>(data, "data", "images_dir", ""), base_dir);
  c.train_source = resolve(get_or<std::string>(data, "data", "train", ""), base_dir);
  c.val_source = resolve(get_or<std::string>(data, "data", "val", ""), base_dir);
  c.pretrained_frontend = resolve(get_or<std::string>(data, "data", "pretrained_frontend", ""), base_dir);
  if (data.contains("split") && !data.at("split").is_null()) {
    const json& s = data.at("split");
    reject_unknown(s, "data.split", {"train", "val", "test", "seed"});
    SplitSettings split;
    split.ratios.train = get_or<double>(s, "data.split", "train", 12000.0 / 15200.0);
    split.ratios.val = get_or<double>(s, "data.split", "val", 1600.0 / 15200.0);
    split.ratios.test = get_or<double>(s, "data.split", "test", 1600.0 / 15200.0);
    split.seed = get_or<std::uint64_t>(s, "data.split", "seed", 0);
    c.split = split;
  }
  if (data.contains("synth")) {
    const json& s = data.at("synth");
    reject_unknown(s, "data.synth", {"n", "image_size", "max_objects", "seed"});
    c.synth.n = get_or<int>(s, "data.synth", "n", c.synth.n);
    c.synth.image_size = get_or<int>(s, "data.synth", "image_size", c.synth.image_size);
    c.synth.max_objects = get_or<int>(s, "data.synth", "max_objects", c.synth.max_objects);
    c.synth.seed = get_or<std::uint64_t>(s, "data.synth", "seed", c.synth.seed);
  }

  c.kernel.beta = get_or<double>(kernel, "kernel", "beta", c.kernel.beta);
  c.kernel.k = get_or<int>(kernel, "kernel", "k", c.kernel.k);
  c.kernel.sigma_fallback = get_or<double>(kernel, "kernel", "sigma_fallback", c.kernel.sigma_fallback);
  c.kernel.truncation_radius = get_or<double>(kernel, "kernel", "truncation_radius", c.kernel.truncation_radius);
  try {
    c.kernel.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }

  TrainConfig& t = c.train;
  try {
    t.variant = parse_variant(get_or<std::string>(train, "train", "variant", "WHCNet3"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("train.variant: ") + e.what());
  }
  t.lr = get_or<double>(train, "train", "lr", t.lr);
  t.epochs = get_or<int>(train, "train", "epochs", t.epochs);
  t.batch_size = get_or<int>(train, "train", "batch_size", t.batch_size);
  t.seed = get_or<std::uint64_t>(train, "train", "seed", t.seed);
  t.determinism = get_or<bool>(train, "train", "determinism", t.determinism);
  const std::string init = get_or<std::string>(train, "train", "init", "gaussian");
  if (init == "gaussian") t.init = InitScheme::Gaussian;
  else if (init == "he") t.init = InitScheme::He;
  else throw ConfigError("train.init must be 'gaussian' or 'he', got '" + init + "'");
  t.init_std = get_or<double>(train, "train", "init_std", t.init_std);
  t.kernel = c.kernel;
  try {
    t.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }

  c.test_source = resolve(get_or<std::string>(eval, "eval", "test", ""), base_dir);
  c.whole_source = resolve(get_or<std::string>(eval, "eval", "whole", ""), base_dir);
  c.eval_threads = get_or<int>(eval, "eval", "threads", 1);
  if (c.eval_threads < 1) throw ConfigError("eval.threads must be >= 1");
  c.output_dir = resolve(get_or<std::string>(output, "output", "dir", "out"), base_dir);

  json eff;
  eff["data"] = {{"annotations", c.annotations.string()},
                 {"images_dir", c.images_dir.string()},
                 {"train", c.train_source.string()},
                 {"val", c.val_source.string()},
                 {"pretrained_frontend", c.pretrained_frontend.string()},
                 {"synth",
                  {{"n", c.synth.n},
                   {"image_size", c.synth.image_size},
                   {"max_objects", c.synth.max_objects},
                   {"seed", c.synth.seed}}}};
  if (c.split)
    eff["data"]["split"] = {{"train", c.split->ratios.train},
                            {"val", c.split->ratios.val},
                            {"test", c.split->ratios.test},
                            {"seed", c.split->seed}};
  eff["kernel"] = {{"beta", c.kernel.beta},
                   {"k", c.kernel.k},
                   {"sigma_fallback", c.kernel.sigma_fallback},
                   {"truncation_radius", c.kernel.truncation_radius}};
  eff["train"] = {{"variant", std::string(variant_name(t.variant))},
                  {"lr", t.lr},
                  {"epochs", t.epochs},
                  {"batch_size", t.batch_size},
                  {"seed", t.seed},
                  {"determinism", t.determinism},
                  {"init", init_name(t.init)},
                  {"init_std", t.init_std}};
  eff["eval"] = {{"test", c.test_source.string()}, {"whole", c.whole_source.string()}, {"threads", c.eval_threads}};
  eff["output"] = {{"dir", c.output_dir.string()}};
  c.effective = std::move(eff);
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_run_config(doc, fs::absolute(path).parent_path());
}

std::string config_hash(const json& effective) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : effective.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return char(std::tolower(ch)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

fs::path find_image(const fs::path& stem_path) {
  for (const char* ext : {".png", ".jpg", ".jpeg", ".PNG", ".JPG", ".JPEG"}) {
    fs::path p = stem_path;
    p += ext;
    if (fs::exists(p)) return p;
  }
  throw IoError("no image found for " + stem_path.string());
}

fs::path dots_path_for(const fs::path& image) {
  return image.parent_path() / (image.stem().string() + ".dots.csv");
}

// A source is a directory of images or a .txt list of image paths without
// extension (relative to the list file). Dots come from sibling .dots.csv
// files, else from the annotation index, else the image has none.
std::vector<LabeledImage> load_source(const fs::path& source, const AnnotationIndex* annotations) {
  std::vector<fs::path> images;
  if (fs::is_directory(source)) {
    images = list_images(source);
  } else if (fs::is_regular_file(source)) {
    const std::string text = read_text_file(source);
    std::size_t pos = 0;
    while (pos < text.size()) {
      const auto nl = text.find('\n', pos);
      std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
      pos = nl == std::string::npos ? text.size() : nl + 1;
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty()) continue;
      const fs::path entry = resolve(line, source.parent_path());
      images.push_back(is_image_file(entry) && fs::exists(entry) ? entry : find_image(entry));
    }
  } else {
    throw IoError("data source not found: " + source.string());
  }
  std::vector<LabeledImage> out;
  for (const auto& path : images) {
    LabeledImage im;
    im.id = path.stem().string();
    im.raster = load_image(path);
    const fs::path dots = dots_path_for(path);
    if (fs::exists(dots)) {
      im.dots = read_dots_file(dots);
    } else if (annotations) {
      if (auto it = annotations->find(im.id); it != annotations->end()) im.dots = it->second.dots;
    }
    out.push_back(std::move(im));
  }
  if (out.empty()) throw IoError("data source " + source.string() + " holds no images");
  return out;
}

std::optional<AnnotationIndex> maybe_annotations(const RunConfig& c) {
  if (c.annotations.empty()) return std::nullopt;
  return parse_annotations(read_text_file(c.annotations));
}

void require(const fs::path& p, const char* key) {
  if (p.empty()) throw ConfigError("config key " + std::string(key) + " is required for this command");
}

struct Manifest {
  json outputs = json::array();
  json extra = json::object();
};

void write_manifest(const RunConfig& c, const std::string& command, const Manifest& m) {
  json j;
  j["command"] = command;
  j["config"] = c.effective;
  j["config_hash"] = config_hash(c.effective);
  j["seed"] = c.train.seed;
  j["versions"] = {{"whcount", kToolVersion},
                   {"compiler", __VERSION__},
                   {"cxx_standard", long(__cplusplus)},
                   {"weights_format", 1},
                   {"dmap_format", 1}};
  j["outputs"] = m.outputs;
  for (const auto& [k, v] : m.extra.items()) j[k] = v;
  write_text_file(c.output_dir / "manifest.json", j.dump(2) + "\n");
}

void cmd_gen_gt(const RunConfig& c, std::ostream& out) {
  require(c.annotations, "data.annotations");
  const AnnotationIndex index = parse_annotations(read_text_file(c.annotations));
  const fs::path dir = c.output_dir / "gt";
  fs::create_directories(dir);
  Manifest m;
  auto emit = [&](const std::string& id, const std::vector<Dot>& dots, int h, int w) {
    const DensityMap map = generate_density(dots, c.kernel, h, w);
    write_dmap(dir / (id + ".dmap"), map);
    write_pgm_heatmap(dir / (id + ".pgm"), map);
    m.outputs.push_back({{"id", id}, {"dots", dots.size()}, {"integral", integrate(map)}});
    out << id << " " << dots.size() << " " << integrate(map) << "\n";
  };
  for (const auto& [id, set] : index) emit(id, set.dots, set.height, set.width);
  if (!c.images_dir.empty()) {
    for (const auto& path : list_images(c.images_dir)) {
      const std::string id = path.stem().string();
      if (index.contains(id)) continue;
      const ImageRaster im = load_image(path);
      emit(id, {}, im.height, im.width);
    }
  }
  write_manifest(c, "gen-gt", m);
}

void cmd_augment(const RunConfig& c, std::ostream& out) {
  require(c.images_dir, "data.images_dir");
  const auto index = maybe_annotations(c);
  const fs::path dir = c.output_dir / "patches";
  fs::create_directories(dir);
  Manifest m;
  std::vector<std::string> stems;
  for (const auto& path : list_images(c.images_dir)) {
    const std::string id = path.stem().string();
    const ImageRaster image = load_image(path);
    std::vector<Dot> dots;
    if (index) {
      if (auto it = index->find(id); it != index->end()) {
        if (it->second.width != image.width || it->second.height != image.height)
          throw ParseError("annotations list " + id + " as " + std::to_string(it->second.width) + "x" +
                           std::to_string(it->second.height) + " but the image is " +
                           std::to_string(image.width) + "x" + std::to_string(image.height));
        dots = it->second.dots;
      }
    }
    for (const Patch& p : augment_all(id, image, dots)) {
      save_png(dir / (p.stem() + ".png"), p.raster);
      write_dots_file(dir / (p.stem() + ".dots.csv"), p.dots);
      stems.push_back(p.stem());
      m.outputs.push_back({{"patch", p.stem()}, {"dots", p.dots.size()}});
    }
  }
  out << stems.size() << " patches written to " << dir.string() << "\n";
  if (c.split) {
    const DatasetSplit split = split_dataset(stems, c.split->ratios, c.split->seed);
    const fs::path sdir = c.output_dir / "splits";
    fs::create_directories(sdir);
    auto write_list = [&](const char* name, const std::vector<std::string>& ids) {
      std::string text;
      for (const auto& s : ids) text += "../patches/" + s + "\n";
      write_text_file(sdir / name, text);
    };
    write_list("train.txt", split.train);
    write_list("val.txt", split.val);
    write_list("test.txt", split.test);
    m.extra["split"] = {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}};
  }
  write_manifest(c, "augment", m);
}

void cmd_synth(const RunConfig& c, std::ostream& out) {
  const fs::path dir = c.output_dir / "synth";
  fs::create_directories(dir);
  Manifest m;
  for (const auto& im : synth_dataset(c.synth.n, c.synth.image_size, c.synth.max_objects, c.synth.seed)) {
    save_png(dir / (im.id + ".png"), im.raster);
    write_dots_file(dir / (im.id + ".dots.csv"), im.dots);
    m.outputs.push_back({{"id", im.id}, {"dots", im.dots.size()}});
  }
  out << c.synth.n << " synthetic images written to " << dir.string() << "\n";
  write_manifest(c, "synth", m);
}

void cmd_train(const RunConfig& c, const std::string& model_path, std::ostream& out) {
  require(c.train_source, "data.train");
  const auto index = maybe_annotations(c);
  const auto* idx = index ? &*index : nullptr;
  const auto train_pairs = make_training_pairs(load_source(c.train_source, idx), c.train);
  std::vector<TrainingPair> val_pairs;
  if (!c.val_source.empty()) val_pairs = make_training_pairs(load_source(c.val_source, idx), c.train);

  Model model(c.train.variant);
  initialize(model, c.train);
  if (!c.pretrained_frontend.empty()) load_frontend_weights(model, c.pretrained_frontend);
  if (!model_path.empty()) load_weights(model, model_path);

  fs::create_directories(c.output_dir);
  TrainConfig tc = c.train;
  tc.checkpoint_dir = c.output_dir / "checkpoints";
  const TrainResult result = train(model, train_pairs, tc, val_pairs.empty() ? nullptr : &val_pairs,
                                   [&](const EpochRecord& r) {
                                     out << "epoch " << r.epoch << " loss " << format_real(r.mean_loss);
                                     if (r.val_mae) out << " val_mae " << format_real(*r.val_mae);
                                     out << "\n";
                                   });
  write_text_file(c.output_dir / "history.csv", format_history_csv(result.history));
  save_weights(model, c.output_dir / "model.whcw");
  Manifest m;
  m.outputs = {"history.csv", "model.whcw", "checkpoints/last.whcw", "checkpoints/best.whcw"};
  m.extra["best_epoch"] = result.best_epoch;
  m.extra["train_items"] = train_pairs.size();
  m.extra["val_items"] = val_pairs.size();
  write_manifest(c, "train", m);
}

void cmd_eval(const RunConfig& c, const std::string& model_path, std::ostream& out) {
  if (model_path.empty()) throw ConfigError("eval requires --model");
  if (c.test_source.empty() && c.whole_source.empty())
    throw ConfigError("eval requires eval.test and/or eval.whole");
  const auto index = maybe_annotations(c);
  const auto* idx = index ? &*index : nullptr;
  Model model(checkpoint_variant(model_path));
  load_weights(model, model_path);

  const int threads = c.train.determinism ? c.eval_threads
                                          : std::max(c.eval_threads, int(std::thread::hardware_concurrency()));
  ReportRow row;
  row.model = std::string(variant_name(model.variant()));
  row.param_count = model.param_count();
  row.checkpoint_bytes = std::size_t(fs::file_size(model_path));
  if (!c.test_source.empty()) row.patches = evaluate(model, load_source(c.test_source, idx), threads);
  if (!c.whole_source.empty()) row.whole = evaluate(model, load_source(c.whole_source, idx), threads);

  fs::create_directories(c.output_dir);
  const std::string table = render_report_table({row});
  write_text_file(c.output_dir / "report.txt", table);
  write_text_file(c.output_dir / "metrics.json", report_to_json({row}).dump(2) + "\n");
  write_text_file(c.output_dir / "metrics.ndjson", per_image_ndjson(row));
  out << table;
  Manifest m;
  m.outputs = {"report.txt", "metrics.json", "metrics.ndjson"};
  m.extra["model"] = fs::absolute(model_path).lexically_normal().string();
  write_manifest(c, "eval", m);
}

void cmd_predict(const RunConfig& c, const std::string& model_path, const std::string& image_path,
                 std::ostream& out) {
  if (model_path.empty()) throw ConfigError("predict requires --model");
  if (image_path.empty()) throw ConfigError("predict requires an image path");
  Model model(checkpoint_variant(model_path));
  load_weights(model, model_path);
  const ImageRaster image = load_image(image_path);
  const Prediction p = predict(model, image);
  fs::create_directories(c.output_dir);
  const std::string stem = fs::path(image_path).stem().string();
  write_dmap(c.output_dir / (stem + ".pred.dmap"), p.map);
  write_pgm_heatmap(c.output_dir / (stem + ".pred.pgm"), p.map);
  out << "count " << format_real(p.count) << "\n";
  Manifest m;
  m.outputs = {stem + ".pred.dmap", stem + ".pred.pgm"};
  m.extra["model"] = fs::absolute(model_path).lexically_normal().string();
  m.extra["image"] = fs::absolute(image_path).lexically_normal().string();
  m.extra["count"] = p.count;
  write_manifest(c, "predict", m);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Density-map wheat head counting toolkit", "whcount"};
  app.require_subcommand(1);
  std::string config_path, model_path, out_dir, image_path;

  auto add_common = [&](CLI::App* sub, bool with_model) {
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
    if (with_model) sub->add_option("--model", model_path, "WHCW checkpoint");
    return sub;
  };
  auto* gen = add_common(app.add_subcommand("gen-gt", "render ground-truth density maps"), false);
  auto* aug = add_common(app.add_subcommand("augment", "8x corner-crop + flip augmentation"), false);
  auto* trn = add_common(app.add_subcommand("train", "train a counting network"), true);
  auto* evl = add_common(app.add_subcommand("eval", "MAE/RMSE evaluation report"), true);
  auto* prd = add_common(app.add_subcommand("predict", "count one image and export its heatmap"), true);
  prd->add_option("image", image_path, "input image")->required();
  auto* syn = add_common(app.add_subcommand("synth", "write a synthetic dataset"), false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    RunConfig c = load_run_config(config_path);
    if (!out_dir.empty()) {
      c.output_dir = fs::absolute(out_dir).lexically_normal();
      c.effective["output"]["dir"] = c.output_dir.string();
    }
    fs::create_directories(c.output_dir);
    if (gen->parsed()) cmd_gen_gt(c, out);
    else if (aug->parsed()) cmd_augment(c, out);
    else if (trn->parsed()) cmd_train(c, model_path, out);
    else if (evl->parsed()) cmd_eval(c, model_path, out);
    else if (prd->parsed()) cmd_predict(c, model_path, image_path, out);
    else if (syn->parsed()) cmd_synth(c, out);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << e.what() << "\n";
  } catch (const fs::filesystem_error& e) {
    err << "error: io: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
  }
  return 1;
}

}  // namespace whc::cli
