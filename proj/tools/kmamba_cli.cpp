// Command-line surface: dataset generation, training, evaluation, gradient
// suites, scaling benchmarks, and the module ablation grid.
//
// Exit codes: 0 success, 3 missing file, 4 malformed config/format,
// 5 failed invariant or numeric contract, 1 other errors. CLI11 reports its
// own usage errors.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "kmamba/bench.hpp"
#include "kmamba/gradsuites.hpp"
#include "kmamba/train.hpp"

namespace fs = std::filesystem;
using namespace kmamba;

namespace {

constexpr int kExitMissingFile = 3;
constexpr int kExitBadFormat = 4;
constexpr int kExitInvariant = 5;

struct GenArgs {
  std::string out;
  int64_t n = 8;
  int64_t size = 32;
  uint64_t seed = 1;
  double noise = 0.03;
  int64_t modalities = 4;
};

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
};

struct EvalArgs {
  std::string model;
  std::string data;
  std::string out;
  std::string split;  // empty = all cases
};

struct BenchArgs {
  std::string kind = "scan";
  std::string sizes = "1024,2048,4096,8192,16384,32768,65536,131072,262144";
  std::string out;
  int reps = 3;
  int64_t d_state = 8;
  int64_t d_feat = 8;
  int64_t d_head = 4;
  int64_t chunk = 1024;
  uint64_t seed = 1;
};

struct AblateArgs {
  std::string grid = "hsa,bkm,mda";
  std::string data;
  std::string out;
  std::string config;
  int64_t steps = 100;
};

std::vector<int64_t> parse_sizes(const std::string& csv) {
  std::vector<int64_t> out;
  std::istringstream in(csv);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(std::stoll(tok));
  if (out.empty()) throw ConfigError("bench: empty size list");
  return out;
}

template <class T>
int run_train(const Config& cfg, const TrainArgs& args) {
  const ModelConfig mc = ModelConfig::from_config(cfg);
  const TrainOptions opt = TrainOptions::from_config(cfg);
  auto data = load_dataset<T>(args.data);
  Model<T> model = Model<T>::create(mc);
  std::cout << "model parameters: " << model.param_count() << "\n";

  fs::create_directories(args.out);
  std::ofstream csv(fs::path(args.out) / "curve.csv");
  const std::string ckpt = (fs::path(args.out) / "model.ckpt").string();
  TrainResult<T> tr = train_model(model, data, opt, &csv, ckpt, &cfg);
  std::cout << "final_train_dice=" << tr.final_train_dice << "\n";
  if (tr.final_val_dice >= 0) std::cout << "final_val_dice=" << tr.final_val_dice << "\n";
  std::cout << "checkpoint: " << ckpt << "\n";

  std::ofstream summary(fs::path(args.out) / "summary.txt");
  summary << "steps = " << opt.steps << "\n";
  summary << "final_train_dice = " << tr.final_train_dice << "\n";
  if (tr.final_val_dice >= 0) summary << "final_val_dice = " << tr.final_val_dice << "\n";
  return 0;
}

template <class T>
int run_eval(const Config& cfg, const EvalArgs& args) {
  const ModelConfig mc = ModelConfig::from_config(cfg);
  Model<T> model = Model<T>::create(mc);
  ParamList<T> params = model.named_params();
  load_checkpoint(args.model, params);

  auto data = load_dataset<T>(args.data);
  if (!args.split.empty()) {
    std::erase_if(data, [&](const Sample<T>& s) { return s.split != args.split; });
  }
  if (data.empty()) throw ConfigError("eval: no cases selected");

  const auto rows = evaluate_model(model, data);
  std::ofstream out(args.out);
  if (!out) throw IoError("eval: cannot open '" + args.out + "'");
  out << "case_id,class,dice,hd95,iou\n";
  for (const auto& r : rows) {
    out << r.case_id << "," << r.cls << "," << r.dice_v << ",";
    if (r.hd95_defined)
      out << r.hd95_v;
    else
      out << "nan";
    out << "," << r.iou_v << "\n";
  }
  std::cout << "wrote " << rows.size() << " metric rows to " << args.out << "\n";
  return 0;
}

template <class T>
int run_ablate(const Config& cfg, const AblateArgs& args) {
  ModelConfig mc = ModelConfig::from_config(cfg);
  TrainOptions opt = TrainOptions::from_config(cfg);
  opt.steps = args.steps;
  auto data = load_dataset<T>(args.data);
  const auto rows = run_ablation(mc, data, opt);
  std::ofstream out(args.out);
  if (!out) throw IoError("ablate: cannot open '" + args.out + "'");
  out << "hsa,bkm,mda,final_total,train_dice\n";
  for (const auto& r : rows) {
    out << (r.hsa ? 1 : 0) << "," << (r.bkm ? 1 : 0) << "," << (r.mda ? 1 : 0) << ","
        << r.final_total << "," << r.train_dice << "\n";
    std::cout << "combo hsa=" << r.hsa << " bkm=" << r.bkm << " mda=" << r.mda
              << " final_total=" << r.final_total << " train_dice=" << r.train_dice << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kmamba: desk-scale 3D segmentation toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* cmd_gen = app.add_subcommand("gen", "generate a synthetic phantom dataset");
  cmd_gen->add_option("--out", gen.out, "output directory")->required();
  cmd_gen->add_option("--n", gen.n, "number of phantoms");
  cmd_gen->add_option("--size", gen.size, "cubic volume edge length");
  cmd_gen->add_option("--seed", gen.seed, "base seed");
  cmd_gen->add_option("--noise", gen.noise, "intensity noise sigma");
  cmd_gen->add_option("--modalities", gen.modalities, "modality count");

  TrainArgs train;
  auto* cmd_train = app.add_subcommand("train", "train a model on a dataset");
  cmd_train->add_option("--config", train.config, "config file")->required();
  cmd_train->add_option("--data", train.data, "dataset directory")->required();
  cmd_train->add_option("--out", train.out, "output directory")->required();

  EvalArgs eval;
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint, write per-case metrics");
  cmd_eval->add_option("--model", eval.model, "checkpoint path")->required();
  cmd_eval->add_option("--data", eval.data, "dataset directory")->required();
  cmd_eval->add_option("--out", eval.out, "metrics CSV path")->required();
  cmd_eval->add_option("--split", eval.split, "restrict to one split (train/val)");

  std::string gradcheck_module;
  auto* cmd_grad = app.add_subcommand("gradcheck", "run the finite-difference suites");
  cmd_grad->add_option("--module", gradcheck_module, "run a single named suite");

  BenchArgs bench;
  auto* cmd_bench = app.add_subcommand("bench", "runtime scaling benchmark");
  cmd_bench->add_option("--kind", bench.kind, "scan | attention")
      ->check(CLI::IsMember({"scan", "attention"}));
  cmd_bench->add_option("--sizes", bench.sizes, "comma-separated sequence lengths");
  cmd_bench->add_option("--out", bench.out, "CSV output path")->required();
  cmd_bench->add_option("--reps", bench.reps, "repetitions per size");
  cmd_bench->add_option("--d-state", bench.d_state, "scan state width");
  cmd_bench->add_option("--d-feat", bench.d_feat, "scan feature width");
  cmd_bench->add_option("--d-head", bench.d_head, "attention head width");
  cmd_bench->add_option("--chunk", bench.chunk, "scan chunk length");
  cmd_bench->add_option("--seed", bench.seed, "rng seed");

  AblateArgs ablate;
  auto* cmd_ablate = app.add_subcommand("ablate", "train the 8-combination module grid");
  cmd_ablate->add_option("--grid", ablate.grid, "module list (fixed: hsa,bkm,mda)");
  cmd_ablate->add_option("--data", ablate.data, "dataset directory")->required();
  cmd_ablate->add_option("--out", ablate.out, "CSV output path")->required();
  cmd_ablate->add_option("--config", ablate.config, "config file (optional)");
  cmd_ablate->add_option("--steps", ablate.steps, "training steps per combination");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_gen) {
      generate_dataset<float>(gen.out, gen.n, gen.size, gen.seed, gen.noise, gen.modalities);
      std::cout << "wrote " << gen.n << " phantoms to " << gen.out << "\n";
      return 0;
    }
    if (*cmd_train) {
      const Config cfg = Config::parse_file(train.config);
      const std::string precision = cfg.get_str("train.precision", "f32");
      return precision == "f64" ? run_train<double>(cfg, train) : run_train<float>(cfg, train);
    }
    if (*cmd_eval) {
      const Config cfg = Config::parse_string(read_checkpoint_config(eval.model));
      const std::string precision = cfg.get_str("train.precision", "f32");
      return precision == "f64" ? run_eval<double>(cfg, eval) : run_eval<float>(cfg, eval);
    }
    if (*cmd_grad) {
      const auto results = run_gradcheck_suites(gradcheck_module);
      bool all = true;
      for (const auto& r : results) {
        std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  worst_rel=" << r.worst_rel
                  << "  coords=" << r.coords << "  (" << r.seconds << " s)\n";
        all = all && r.pass;
      }
      return all ? 0 : kExitInvariant;
    }
    if (*cmd_bench) {
      const auto sizes = parse_sizes(bench.sizes);
      BenchResult res;
      if (bench.kind == "scan")
        res = bench_scan(sizes, bench.d_state, bench.d_feat, bench.chunk, bench.reps, bench.seed);
      else
        res = bench_attention(sizes, bench.d_head, bench.reps, bench.seed);
      write_bench_csv(bench.out, res);
      std::cout << bench.kind << " slope_fit=" << res.slope << "\n";
      return 0;
    }
    if (*cmd_ablate) {
      if (ablate.grid != "hsa,bkm,mda")
        throw ConfigError("ablate: only the hsa,bkm,mda grid is available");
      Config cfg;
      if (!ablate.config.empty()) cfg = Config::parse_file(ablate.config);
      return run_ablate<float>(cfg, ablate);
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingFile;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadFormat;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadFormat;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const InvalidSpecError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const UndefinedMetricError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
