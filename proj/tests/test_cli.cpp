#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "whc/cli.hpp"
#include "whc/error.hpp"
#include "whc/models.hpp"

using namespace whc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "whcount");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("whc_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_json(const fs::path& p, const json& j) { write_text_file(p, j.dump(2)); }

// Two 64x64 parents, one annotated with three boxes and one absent from the CSV.
fs::path make_dataset(const fs::path& root) {
  fs::create_directories(root / "images");
  ImageRaster a(64, 64), b(64, 64);
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    a.pixels[i] = std::uint8_t(i * 7);
    b.pixels[i] = std::uint8_t(i * 13);
  }
  save_png(root / "images" / "alpha.png", a);
  save_png(root / "images" / "beta.png", b);
  write_text_file(root / "labels.csv",
                  "image_id,width,height,bbox,source\n"
                  "alpha,64,64,\"[4.0, 6.0, 4.0, 4.0]\",s\n"
                  "alpha,64,64,\"[40.0, 10.0, 6.0, 2.0]\",s\n"
                  "alpha,64,64,\"[30.0, 40.0, 4.0, 4.0]\",s\n");
  return root;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  auto r = run_cli({});
  CHECK(r.code == 2);
  CHECK(r.err.rfind("error: usage:", 0) == 0);
  CHECK(run_cli({"frobnicate", "--config", "x.json"}).code == 2);
  CHECK(run_cli({"train"}).code == 2);
  CHECK(run_cli({"--help"}).code == 0);
}

TEST_CASE("config problems are reported with their kind") {
  const fs::path dir = fresh("config");
  write_json(dir / "bad.json", {{"train", {{"epochz", 3}}}});
  auto r = run_cli({"synth", "--config", (dir / "bad.json").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("error: config:") == 0);
  CHECK(r.err.find("train.epochz") != std::string::npos);

  write_json(dir / "type.json", {{"train", {{"lr", "fast"}}}});
  CHECK(run_cli({"synth", "--config", (dir / "type.json").string()}).err.find("error: config:") == 0);
  write_text_file(dir / "broken.json", "{ not json");
  CHECK(run_cli({"synth", "--config", (dir / "broken.json").string()}).err.find("error: config:") == 0);
  CHECK(run_cli({"synth", "--config", (dir / "missing.json").string()}).err.find("error: io:") == 0);
  write_json(dir / "variant.json", {{"train", {{"variant", "ResNet"}}}});
  CHECK(run_cli({"synth", "--config", (dir / "variant.json").string()}).code == 1);
  write_json(dir / "gt.json", json::object());
  CHECK(run_cli({"gen-gt", "--config", (dir / "gt.json").string()}).err.find("data.annotations") !=
        std::string::npos);
}

TEST_CASE("parse_run_config resolves paths and fills defaults") {
  const cli::RunConfig c = cli::parse_run_config(
      json{{"data", {{"annotations", "a.csv"}, {"images_dir", "/abs/img"}}}, {"train", {{"variant", "WHCNet_2"}}}},
      "/base");
  CHECK(c.annotations == fs::path("/base/a.csv"));
  CHECK(c.images_dir == fs::path("/abs/img"));
  CHECK(c.train.variant == Variant::WHCNet2);
  CHECK(c.train.lr == 1e-6);
  CHECK(c.kernel.beta == 0.3);
  CHECK(c.kernel.k == 3);
  CHECK(c.effective["kernel"]["sigma_fallback"] == 15.0);
  CHECK(c.effective["train"]["lr"] == 1e-6);
  CHECK(cli::config_hash(c.effective).size() == 16);
  CHECK(cli::config_hash(c.effective) == cli::config_hash(c.effective));
  cli::RunConfig d = c;
  d.effective["train"]["lr"] = 1e-4;
  CHECK(cli::config_hash(d.effective) != cli::config_hash(c.effective));
  CHECK_THROWS_AS(cli::parse_run_config(json{{"extra", 1}}, "/"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config(json{{"train", {{"epochs", 0}}}}, "/"), Error);
}

TEST_CASE("gen-gt renders maps for annotated and unannotated images") {
  const fs::path root = make_dataset(fresh("gengt"));
  write_json(root / "cfg.json", {{"data", {{"annotations", "labels.csv"}, {"images_dir", "images"}}},
                                 {"output", {{"dir", "out"}}}});
  const auto r = run_cli({"gen-gt", "--config", (root / "cfg.json").string()});
  REQUIRE(r.code == 0);
  const DensityMap alpha = read_dmap(root / "out/gt/alpha.dmap");
  CHECK(alpha.height == 64);
  CHECK(std::abs(integrate(alpha) - 3.0) <= 1e-4);
  CHECK(integrate(read_dmap(root / "out/gt/beta.dmap")) == 0.0);
  CHECK(fs::exists(root / "out/gt/alpha.pgm"));
  const json manifest = json::parse(read_text_file(root / "out/manifest.json"));
  CHECK(manifest["command"] == "gen-gt");
  CHECK(manifest["config_hash"].get<std::string>().size() == 16);
  CHECK(manifest["config"]["kernel"]["beta"] == 0.3);
}

TEST_CASE("augment, train, eval and predict end to end") {
  const fs::path root = make_dataset(fresh("pipeline"));
  write_json(root / "cfg.json",
             {{"data",
               {{"annotations", "labels.csv"},
                {"images_dir", "images"},
                {"split", {{"train", 0.5}, {"val", 0.25}, {"test", 0.25}, {"seed", 4}}},
                {"train", "out/splits/train.txt"},
                {"val", "out/splits/val.txt"}}},
              {"train", {{"variant", "WHCNet3"}, {"lr", 1e-4}, {"epochs", 2}, {"seed", 9}, {"init", "he"}}},
              {"eval", {{"test", "out/splits/test.txt"}, {"whole", "images"}}},
              {"output", {{"dir", "out"}}}});
  const std::string cfg = (root / "cfg.json").string();

  auto aug = run_cli({"augment", "--config", cfg});
  REQUIRE(aug.code == 0);
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(root / "out/patches")) pngs += e.path().extension() == ".png";
  CHECK(pngs == 16);
  CHECK(fs::exists(root / "out/patches/alpha_TL_f.dots.csv"));
  const auto tl = read_dots_file(root / "out/patches/alpha_TL_o.dots.csv");
  REQUIRE(tl.size() == 1);
  CHECK(tl[0] == Dot{6, 8});
  CHECK(read_dots_file(root / "out/patches/alpha_TL_f.dots.csv")[0] == Dot{6, 23});
  const std::string train_list = read_text_file(root / "out/splits/train.txt");
  CHECK(std::count(train_list.begin(), train_list.end(), '\n') == 8);

  auto tr = run_cli({"train", "--config", cfg});
  REQUIRE_MESSAGE(tr.code == 0, tr.err);
  CHECK(tr.out.find("epoch 2 loss") != std::string::npos);
  CHECK(read_text_file(root / "out/history.csv").rfind("epoch,mean_loss,val_mae,val_rmse\n", 0) == 0);
  CHECK(checkpoint_variant(root / "out/model.whcw") == Variant::WHCNet3);
  CHECK(fs::exists(root / "out/checkpoints/best.whcw"));

  auto ev = run_cli({"eval", "--config", cfg, "--model", (root / "out/model.whcw").string()});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  CHECK(ev.out.find("Whole image") != std::string::npos);
  const json metrics = json::parse(read_text_file(root / "out/metrics.json"));
  CHECK(metrics["models"][0]["patches"]["n"] == 4);
  CHECK(metrics["models"][0]["whole_image"]["n"] == 2);
  CHECK(metrics["models"][0]["whole_image"]["mae"].get<double>() <=
        metrics["models"][0]["whole_image"]["rmse"].get<double>());

  auto pr = run_cli({"predict", "--config", cfg, "--model", (root / "out/model.whcw").string(), "--out",
                     (root / "pred").string(), (root / "images/alpha.png").string()});
  REQUIRE_MESSAGE(pr.code == 0, pr.err);
  CHECK(pr.out.rfind("count ", 0) == 0);
  CHECK(read_dmap(root / "pred/alpha.pred.dmap").height == 8);
  CHECK(fs::exists(root / "pred/alpha.pred.pgm"));

  auto missing = run_cli({"eval", "--config", cfg, "--model", (root / "nope.whcw").string()});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("error: io:") == 0);
}

TEST_CASE("synth writes images with dot files") {
  const fs::path root = fresh("synth");
  write_json(root / "cfg.json", {{"data", {{"synth", {{"n", 3}, {"image_size", 32}, {"max_objects", 4}, {"seed", 2}}}}}});
  const auto r = run_cli({"synth", "--config", (root / "cfg.json").string(), "--out", (root / "o").string()});
  REQUIRE(r.code == 0);
  for (int i = 0; i < 3; ++i) {
    CHECK(load_image(root / "o/synth" / ("synth_" + std::to_string(i) + ".png")).width == 32);
    CHECK(fs::exists(root / "o/synth" / ("synth_" + std::to_string(i) + ".dots.csv")));
  }
}
