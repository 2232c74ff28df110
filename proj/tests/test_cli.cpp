#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "tosa/masks.hpp"
#include "tosa/run_config.hpp"
#include "tosa/runner.hpp"
#include "tosa/selector.hpp"

using namespace tosa;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(# micro experiment
[model]
image_size = 16
patch_size = 4
embed_dim = 16
heads = 2
depth = 3
num_classes = 4
tosa_layers = 2
ratio = 0.8
selector_channels = 4
selector_kernel = 3

[data]
source = quadrant
train_size = 16
test_size = 8

[pretrain]
epochs = 2
batch_size = 8
lr = 3e-3

[selector]
epochs = 2
batch_size = 8
lr = 2e-3

[finetune]
epochs = 1
batch_size = 8
lr = 1e-3

[dense]
epochs = 5
batch_size = 8

[run]
seed = 7
phases = pretrain,selector,finetune,dense,eval
)";

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

fs::path fresh_dir(const char* name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("config parsing applies defaults and reads sections") {
  RunConfig c = parse_run_config_text(kTinyConfig, "tiny.cfg");
  CHECK(c.model.embed_dim == 16);
  CHECK(c.model.tosa_layers == std::vector<std::size_t>{2});
  CHECK(c.seed == 7);
  CHECK(c.phases.at(Phase::kPretrain).epochs == 2);
  CHECK(c.phases.at(Phase::kPretrain).lr == 3e-3);
  CHECK(c.phases.at(Phase::kPretrain).seed == 7);       // run seed flows down
  CHECK(c.phases.at(Phase::kDense).lr == 1e-2);         // untouched default
  CHECK(c.phases.at(Phase::kSelector).loss == LossKind::kKld);
  CHECK(c.phase_order.size() == 5);
}

TEST_CASE("config errors are line-anchored and name the key") {
  const char* bad_key =
      "[model]\n"
      "embed_dim = 16\n"
      "embed_dimension = 32\n";
  try {
    parse_run_config_text(bad_key, "bad.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("embed_dimension") != std::string::npos);
    CHECK(std::string(e.what()).find("bad.cfg:3") != std::string::npos);
  }

  CHECK_THROWS_AS(parse_run_config_text("[model]\nheads 4\n", "x.cfg"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text("heads = 4\n", "x.cfg"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text("[model]\nheads = banana\n", "x.cfg"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text("[model]\nheads = 2\nheads = 3\n", "x.cfg"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text("[run]\nphases = finetune,pretrain\n", "x.cfg"),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config_text("[run]\nphases = pretrain,warmup\n", "x.cfg"), ConfigError);
  // structurally invalid model caught at parse time
  CHECK_THROWS_AS(parse_run_config_text("[model]\ntosa_layers = 1\n", "x.cfg"), ConfigError);
}

TEST_CASE("effective config echo round-trips") {
  RunConfig c = parse_run_config_text(kTinyConfig, "tiny.cfg");
  const std::string echo = render_effective_config(c);
  RunConfig reparsed = parse_run_config_text(echo, "echo.cfg");
  CHECK(render_effective_config(reparsed) == echo);
  CHECK(reparsed.model == c.model);
  CHECK(reparsed.seed == c.seed);
}

TEST_CASE("selection masks follow the dark-skipped convention") {
  ModelConfig config;
  config.image_size = 16;
  config.patch_size = 4;
  config.embed_dim = 16;
  config.heads = 2;
  config.depth = 3;
  config.tosa_layers = {2};

  // head 0 attends {0 (cls), 1, 2}; head 1 attends {0, 5, 9}
  SelectionPlan plan;
  plan.num_tokens = 17;
  plan.ratio = 0.2;
  plan.top_k = 3;
  for (const auto& attended : {std::vector<std::size_t>{0, 1, 2}, std::vector<std::size_t>{0, 5, 9}}) {
    HeadPlan head;
    head.attended = attended;
    for (std::size_t i = 0; i < 17; ++i) {
      if (!std::binary_search(attended.begin(), attended.end(), i)) head.skipped.push_back(i);
    }
    head.scores = Tensor::zeros({17});
    plan.heads.push_back(std::move(head));
  }

  std::map<std::size_t, SelectionPlan> plans{{2, plan}};
  const auto masks = masks_from_plans(config, plans);
  REQUIRE(masks.size() == 3);  // two heads + union

  const SelectionMask& head0 = masks[0];
  CHECK(head0.cls_attended);
  CHECK(head0.attended_count == 3);
  CHECK(head0.grid[0] == 255);  // token 1 -> patch 0
  CHECK(head0.grid[1] == 255);
  CHECK(head0.grid[2] == 0);    // skipped patches are dark
  CHECK_NOTHROW(head0.validate(3));

  const SelectionMask& union_mask = masks[2];
  CHECK(union_mask.head == 2);
  CHECK(union_mask.grid[0] == 255);
  CHECK(union_mask.grid[4] == 255);  // token 5 via head 1
  CHECK(union_mask.grid[3] == 0);
}

TEST_CASE("pgm files carry the P5 header and payload") {
  const fs::path path = fs::temp_directory_path() / "tosa_test_mask.pgm";
  write_pgm(path.string(), 4, 2, {0, 255, 0, 255, 255, 0, 255, 0});
  const std::string content = read_file(path);
  CHECK(content.substr(0, 3) == "P5\n");
  CHECK(content.find("4 2\n255\n") != std::string::npos);
  CHECK(content.size() == std::string("P5\n4 2\n255\n").size() + 8);
  fs::remove(path);
}

TEST_CASE("pipeline runs, resumes, and reproduces bit-identical artifacts") {
  RunConfig config = parse_run_config_text(kTinyConfig, "tiny.cfg");
  const fs::path dir_a = fresh_dir("tosa_run_a");
  const fs::path dir_b = fresh_dir("tosa_run_b");

  config.out_dir = dir_a.string();
  std::ostringstream log_a;
  run_pipeline(config, log_a);

  for (const char* artifact :
       {"effective.cfg", "metrics.csv", "phase_pretrain.ckpt", "phase_selector.ckpt",
        "phase_finetune.ckpt", "phase_dense.ckpt", "report.json", "cost.json"}) {
    CHECK_MESSAGE(fs::exists(dir_a / artifact), artifact);
  }

  // resume: a second run executes nothing new
  std::ostringstream log_resume;
  run_pipeline(config, log_resume);
  CHECK(log_resume.str().find("resume") != std::string::npos);
  CHECK(log_resume.str().find("done") == std::string::npos);

  // bit-identical reproduction in a fresh directory
  config.out_dir = dir_b.string();
  std::ostringstream log_b;
  run_pipeline(config, log_b);
  CHECK(read_file(dir_a / "metrics.csv") == read_file(dir_b / "metrics.csv"));
  CHECK(read_file(dir_a / "phase_finetune.ckpt") == read_file(dir_b / "phase_finetune.ckpt"));
  CHECK(read_file(dir_a / "report.json") == read_file(dir_b / "report.json"));

  // report keys are stable and reduction comes from the cost model
  const auto report = nlohmann::json::parse(read_file(dir_a / "report.json"));
  const auto cost = nlohmann::json::parse(read_file(dir_a / "cost.json"));
  CHECK(report["baseline"]["reduction_percent"] == 0.0);
  CHECK(report["tosa"]["reduction_percent"] == cost["reduction_percent"]);
  CHECK(report["token_counts"]["tokens"] == 17);
  CHECK(report["token_counts"]["selected"] == 14);  // round(0.8 * 17)

  // a conflicting config may not reuse the directory
  RunConfig other = config;
  other.seed = 8;
  for (auto& [phase, cfg] : other.phases) cfg.seed = 8;
  other.out_dir = dir_a.string();
  std::ostringstream log_err;
  CHECK_THROWS_WITH_AS(run_pipeline(other, log_err), doctest::Contains("different config"),
                       std::runtime_error);

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

#ifdef TOSA_BIN
TEST_CASE("cli binary: cost, run on a bad config, and visualize") {
  const std::string bin = TOSA_BIN;
  const fs::path dir = fresh_dir("tosa_cli_test");
  fs::create_directories(dir);
  const fs::path cfg = dir / "tiny.cfg";
  {
    std::ofstream out(cfg);
    out << kTinyConfig;
    out << "\n";
  }

  auto run = [&](const std::string& args) {
    const std::string cmd = bin + " " + args + " > " + (dir / "out.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };

  CHECK(run("cost --config " + cfg.string()) == 0);
  const std::string cost_out = read_file(dir / "out.txt");
  CHECK(cost_out.find("gflops_paper_convention") != std::string::npos);

  // malformed config: exit code 2 with a line-anchored message
  const fs::path bad = dir / "bad.cfg";
  {
    std::ofstream out(bad);
    out << "[model]\nembed_dim = sixteen\n";
  }
  CHECK(run("cost --config " + bad.string()) == 2);
  CHECK(read_file(dir / "out.txt").find("bad.cfg:2") != std::string::npos);

  // full micro pipeline through the binary, then eval / report / visualize
  const fs::path run_dir = dir / "run";
  CHECK(run("run --config " + cfg.string() + " --out " + run_dir.string()) == 0);
  const std::string ckpt = (run_dir / "phase_finetune.ckpt").string();
  CHECK(run("eval --config " + cfg.string() + " --ckpt " + ckpt) == 0);
  CHECK(read_file(dir / "out.txt").find("test accuracy") != std::string::npos);
  CHECK(run("report --config " + cfg.string() + " --ckpt " + ckpt) == 0);

  const fs::path masks = dir / "masks";
  CHECK(run("visualize --config " + cfg.string() + " --ckpt " + ckpt + " --centered --blend --out " +
            masks.string()) == 0);
  CHECK(fs::exists(masks / "mask_layer2_head0.pgm"));
  CHECK(fs::exists(masks / "mask_layer2_union.pgm"));
  CHECK(fs::exists(masks / "overlay_layer2_head0.pgm"));

  fs::remove_all(dir);
}
#endif
