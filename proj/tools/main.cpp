#include <cmath>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hsimamba/ablation.hpp"
#include "hsimamba/bench.hpp"
#include "hsimamba/checkpoint.hpp"
#include "hsimamba/config.hpp"
#include "hsimamba/data.hpp"
#include "hsimamba/errors.hpp"
#include "hsimamba/predict_map.hpp"
#include "hsimamba/routes.hpp"
#include "hsimamba/selfcheck.hpp"
#include "hsimamba/trainer.hpp"

namespace {

using namespace hsimamba;

constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitIo = 3;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorKind::open_failed, "cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError(IoErrorKind::write_failed, "failed writing " + path);
}

void print_metrics(const train::Evaluation& ev, const std::vector<std::string>& class_names) {
  const auto& m = ev.metrics;
  std::printf("test samples: %llu\n", static_cast<unsigned long long>(ev.confusion.total()));
  std::printf("OA    %.4f\nAA    %.4f\nKappa %.4f\n", m.overall_accuracy, m.average_accuracy, m.kappa);
  std::printf("per-class accuracy:\n");
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c + 1);
    if (std::isnan(m.per_class[c])) {
      std::printf("  %2zu %-20s   n/a (no test samples, excluded from AA)\n", c + 1, name.c_str());
    } else {
      std::printf("  %2zu %-20s %.4f\n", c + 1, name.c_str(), m.per_class[c]);
    }
  }
}

std::filesystem::path label_grid_path(const std::filesystem::path& ppm) {
  auto p = ppm;
  p.replace_extension(".labels.hsic");
  return p;
}

int run(int argc, char** argv) {
  CLI::App app{"3-D spectral-spatial selective-scan hyperspectral classifier"};
  app.require_subcommand(1);

  std::string config_path, out_path, ckpt_path, data_path, shape = "32x32x16";
  std::uint64_t split_seed = 0, seed = 0;
  double fraction = 0.0, sigma = 0.0;
  std::size_t state = 16, dim = 32, classes = 3, patch = 3, bands = 2;
  int seeds = 5;
  std::string route_text = "5";

  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  train_cmd->add_option("--config", config_path, "TrainConfig JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out_path, "checkpoint path")->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the held-out split of a cube");
  eval_cmd->add_option("--ckpt", ckpt_path)->required();
  eval_cmd->add_option("--data", data_path, "HSIC cube")->required();
  auto* split_opt = eval_cmd->add_option("--split-seed", split_seed, "split seed (default: training seed)");
  auto* frac_opt = eval_cmd->add_option("--fraction", fraction, "train fraction (default: training fraction)");

  auto* routes_cmd = app.add_subcommand("routes", "route ablation: one model per route and seed");
  routes_cmd->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  routes_cmd->add_option("--out", out_path, "CSV report path")->required();
  std::size_t ablation_seeds = 3;
  routes_cmd->add_option("--seeds", ablation_seeds, "number of seeds, starting at the config seed")
      ->check(CLI::Range(1, 100));

  auto* map_cmd = app.add_subcommand("map", "classify every pixel and write a P6 colour map");
  map_cmd->add_option("--ckpt", ckpt_path)->required();
  map_cmd->add_option("--data", data_path)->required();
  map_cmd->add_option("--out", out_path, "PPM path; the label grid goes next to it as .labels.hsic")->required();

  auto* bench_cmd = app.add_subcommand("bench-scan", "time the selective scan over sequence lengths");
  bench_cmd->add_option("--state", state, "state size N");
  bench_cmd->add_option("--dim", dim, "feature size D");

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic HSIC cube");
  synth_cmd->add_option("--classes", classes)->required();
  synth_cmd->add_option("--shape", shape, "HxWxV")->required();
  synth_cmd->add_option("--sigma", sigma, "noise standard deviation")->required();
  synth_cmd->add_option("--seed", seed)->required();
  synth_cmd->add_option("--out", out_path)->required();

  auto* check_cmd = app.add_subcommand("scan-check", "oracle equivalence and gradient-check suites");
  check_cmd->add_option("--seeds", seeds, "gradient-check seeds")->check(CLI::Range(1, 100));

  auto* index_cmd = app.add_subcommand("index-map", "dump the flattening order of a route as CSV");
  index_cmd->add_option("--route", route_text, "route name or number 1-5");
  index_cmd->add_option("--patch", patch, "token cube side P")->check(CLI::PositiveNumber);
  index_cmd->add_option("--bands", bands, "token cube depth K")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  if (train_cmd->parsed()) {
    const auto config = train::load_train_config(config_path);
    auto result = train::train(config, [](const train::EpochLog& e) {
      std::printf("epoch %4zu  loss %.6f  train_acc %.4f\n", e.epoch, e.mean_loss, e.train_accuracy);
      std::fflush(stdout);
    });
    train::save_checkpoint(result.checkpoint, out_path);
    std::printf("saved %s (%zu trainable parameters)\n", out_path.c_str(),
                result.checkpoint.model.trainable_parameter_count());
  } else if (eval_cmd->parsed()) {
    const auto ckpt = train::load_checkpoint(ckpt_path);
    const auto cube = data::load_cube(data_path);
    const auto ev = train::evaluate(ckpt, cube, split_opt->count() ? split_seed : ckpt.config.seed,
                                    frac_opt->count() ? fraction : ckpt.config.train_fraction);
    print_metrics(ev, ckpt.class_names);
  } else if (routes_cmd->parsed()) {
    const auto config = train::load_train_config(config_path);
    if (config.dataset.empty()) throw ValidationError("config has no dataset path");
    const auto cube = data::load_cube(config.dataset);
    std::vector<std::uint64_t> seed_list;
    for (std::size_t i = 0; i < ablation_seeds; ++i) seed_list.push_back(config.seed + i);
    const auto report = train::route_ablation(
        config, cube, seed_list, routes::kAllRoutes,
        [](routes::RouteId r, std::uint64_t s, const train::AblationRun* run) {
          if (run) {
            std::printf("route %d seed %llu: OA %.4f\n", static_cast<int>(r), static_cast<unsigned long long>(s),
                        run->overall_accuracy);
          } else {
            std::printf("route %d seed %llu: failed\n", static_cast<int>(r), static_cast<unsigned long long>(s));
          }
          std::fflush(stdout);
        });
    write_text(out_path, report.csv());
    std::printf("\n%s", report.table().c_str());
    for (const auto& row : report.rows) {
      if (!row.ok()) return kExitNumerical;
    }
  } else if (map_cmd->parsed()) {
    const auto ckpt = train::load_checkpoint(ckpt_path);
    const auto cube = data::load_cube(data_path);
    const auto map = train::predict_map(ckpt, cube);
    train::write_ppm(map, out_path);
    const auto grid = label_grid_path(out_path);
    data::save_cube(train::label_map_cube(map, ckpt.class_names), grid);
    std::printf("wrote %s and %s\n", out_path.c_str(), grid.string().c_str());
  } else if (bench_cmd->parsed()) {
    bench::ScanBenchConfig config;
    config.state = state;
    config.dim = dim;
    const auto report = bench::bench_scan(config);
    std::printf("selective scan, D=%zu N=%zu, median of %d\n%s", dim, state, config.repeats, report.table().c_str());
  } else if (synth_cmd->parsed()) {
    data::SynthSpec spec;
    if (std::sscanf(shape.c_str(), "%zux%zux%zu", &spec.height, &spec.width, &spec.bands) != 3) {
      throw ValidationError("--shape must look like HxWxV, got '" + shape + "'");
    }
    spec.classes = classes;
    spec.noise_sigma = sigma;
    spec.seed = seed;
    data::save_cube(data::synth_dataset(spec), out_path);
    std::printf("wrote %s\n", out_path.c_str());
  } else if (check_cmd->parsed()) {
    const auto report = selfcheck::run_scan_check(seeds, [](const selfcheck::CheckResult& r) {
      std::printf("%s  %-36s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
      std::fflush(stdout);
    });
    return report.passed() ? 0 : 1;
  } else if (index_cmd->parsed()) {
    const auto route = routes::parse_route(route_text);
    const auto orderings = routes::route_orderings(route);
    std::printf("branch,ordering,seq_pos,p_row,p_col,k\n");
    for (std::size_t b = 0; b < orderings.size(); ++b) {
      const auto map = routes::index_map(orderings[b], patch, bands);
      const std::string name = routes::ordering_name(orderings[b]);
      for (std::size_t i = 0; i < map.size(); ++i) {
        std::printf("%zu,%s,%zu,%zu,%zu,%zu\n", b, name.c_str(), i, map[i].p / patch, map[i].p % patch, map[i].k);
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Keep freed activation buffers in the heap instead of returning them to the OS every step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  try {
    return run(argc, argv);
  } catch (const hsimamba::ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return kExitValidation;
  } catch (const hsimamba::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kExitNumerical;
  } catch (const hsimamba::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kExitIo;
  } catch (const hsimamba::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
}
