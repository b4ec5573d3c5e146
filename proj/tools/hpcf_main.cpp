// Command-line front end: synthesize data, train, evaluate, predict, and run
// the gradient-check suite. Exit codes: 0 success, 1 internal failure,
// 2 usage/config error.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hpcf/checkpoint.hpp"
#include "hpcf/data.hpp"
#include "hpcf/gradcheck_suite.hpp"
#include "hpcf/metrics.hpp"
#include "hpcf/parallel.hpp"
#include "hpcf/serialize.hpp"
#include "hpcf/train.hpp"

namespace {

using hpcf::ConfigError;

std::filesystem::path default_out_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("HPCF_OUT_DIR")) return env;
  return ".";
}

std::pair<int, int> parse_size(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw ConfigError("--size expects HxW, e.g. 64x64");
  try {
    return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
  } catch (const std::exception&) {
    throw ConfigError("--size expects HxW, e.g. 64x64");
  }
}

struct RunConfig {
  hpcf::TrainConfig train;
  hpcf::ModelConfig model;
};

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const std::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  nlohmann::json train_json = nlohmann::json::object();
  nlohmann::json model_json = nlohmann::json::object();
  const nlohmann::json train_keys = hpcf::train_config_to_json(hpcf::TrainConfig{});
  const nlohmann::json model_keys = hpcf::model_config_to_json(hpcf::ModelConfig{});
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (train_keys.contains(it.key())) {
      train_json[it.key()] = it.value();
    } else if (model_keys.contains(it.key())) {
      model_json[it.key()] = it.value();
    } else {
      throw ConfigError("config file " + path + ": unknown key '" + it.key() + "'");
    }
  }
  rc.train = hpcf::train_config_from_json(train_json);
  rc.model = hpcf::model_config_from_json(model_json);
  return rc;
}

int run(int argc, char** argv) {
  CLI::App app{"hierarchical paired channel fusion change detection"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = auto)")->capture_default_str();

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "render a synthetic change-pair dataset");
  std::uint64_t synth_seed = 7;
  int synth_count = 16;
  std::string synth_size = "64x64";
  std::string synth_out;
  hpcf::SynthOptions sopt;
  synth->add_option("--seed", synth_seed, "dataset seed")->capture_default_str();
  synth->add_option("--count", synth_count, "number of pairs")->capture_default_str();
  synth->add_option("--size", synth_size, "pair resolution HxW")->capture_default_str();
  synth->add_option("--out", synth_out, "output directory (default $HPCF_OUT_DIR or .)");
  synth->add_option("--val-frac", sopt.val_fraction, "fraction tagged as the val split")
      ->capture_default_str();
  synth->add_option("--min-objects", sopt.min_objects)->capture_default_str();
  synth->add_option("--max-objects", sopt.max_objects)->capture_default_str();
  synth->add_option("--noise", sopt.noise, "background noise amplitude")->capture_default_str();
  synth->add_option("--jitter", sopt.jitter, "t1 brightness jitter")->capture_default_str();
  synth->add_flag("--no-objects", sopt.no_objects, "render empty change maps");

  // train ------------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train a model on a manifest dataset");
  std::string train_data, train_out, train_config_path, train_arch;
  bool train_augment = false;
  hpcf::TrainConfig tc_flags;
  int width_div_flag = 8;
  train_cmd->add_option("--data", train_data, "dataset manifest path")->required();
  train_cmd->add_option("--out", train_out, "output directory (default $HPCF_OUT_DIR or .)");
  train_cmd->add_option("--config", train_config_path, "JSON config file (flags win)");
  train_cmd->add_option("--epochs", tc_flags.epochs);
  train_cmd->add_option("--batch", tc_flags.batch_size);
  train_cmd->add_option("--lr", tc_flags.lr);
  train_cmd->add_option("--momentum", tc_flags.momentum);
  train_cmd->add_option("--weight-decay", tc_flags.weight_decay);
  train_cmd->add_option("--seed", tc_flags.seed);
  train_cmd->add_option("--checkpoint-every", tc_flags.checkpoint_every);
  train_cmd->add_option("--stop-at-f1", tc_flags.stop_at_f1);
  train_cmd->add_option("--width-div", width_div_flag, "channel width divisor");
  train_cmd->add_option("--arch", train_arch, "hpcf or early_fusion");
  train_cmd->add_flag("--augment", train_augment, "expand train split 8x (rotations+mirror)");

  // eval -------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string eval_ckpt, eval_data, eval_split = "val", eval_out;
  int eval_batch = 8;
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--data", eval_data, "dataset manifest path")->required();
  eval_cmd->add_option("--split", eval_split, "train, val or test")->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "report file (default <out dir>/eval_<split>.tsv)");
  eval_cmd->add_option("--batch", eval_batch)->capture_default_str();

  // predict ----------------------------------------------------------------
  auto* predict_cmd = app.add_subcommand("predict", "predict a change map for one pair");
  std::string pr_ckpt, pr_t0, pr_t1, pr_out = "change_map.png";
  predict_cmd->add_option("--checkpoint", pr_ckpt)->required();
  predict_cmd->add_option("--t0", pr_t0)->required();
  predict_cmd->add_option("--t1", pr_t1)->required();
  predict_cmd->add_option("--out", pr_out)->capture_default_str();

  // gradcheck ---------------------------------------------------------------
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  hpcf::SuiteOptions gc_opt;
  double gc_tol = 0.0;
  gc_cmd->add_option("--scale", gc_opt.width_div, "model width divisor")->capture_default_str();
  gc_cmd->add_option("--tol", gc_tol, "override both op and model tolerances");
  gc_cmd->add_option("--seed", gc_opt.seed)->capture_default_str();
  gc_cmd->add_option("--samples", gc_opt.model_samples, "sampled elements per model parameter")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the parse error
    return code == 0 ? 0 : 2;
  }
  hpcf::set_num_threads(threads);

  if (*synth) {
    auto [h, w] = parse_size(synth_size);
    sopt.height = h;
    sopt.width = w;
    sopt.count = synth_count;
    const auto out_dir = default_out_dir(synth_out);
    hpcf::synth_dataset(synth_seed, sopt, out_dir);
    std::cout << "wrote " << synth_count << " pairs to " << out_dir.string() << "\n";
    return 0;
  }

  if (*train_cmd) {
    RunConfig rc = load_run_config(train_config_path);
    auto pick = [&](const char* flag, auto& dst, const auto& src) {
      if (train_cmd->count(flag)) dst = src;
    };
    pick("--epochs", rc.train.epochs, tc_flags.epochs);
    pick("--batch", rc.train.batch_size, tc_flags.batch_size);
    pick("--lr", rc.train.lr, tc_flags.lr);
    pick("--momentum", rc.train.momentum, tc_flags.momentum);
    pick("--weight-decay", rc.train.weight_decay, tc_flags.weight_decay);
    pick("--seed", rc.train.seed, tc_flags.seed);
    pick("--checkpoint-every", rc.train.checkpoint_every, tc_flags.checkpoint_every);
    pick("--stop-at-f1", rc.train.stop_at_f1, tc_flags.stop_at_f1);
    if (!train_config_path.empty() && !train_cmd->count("--width-div")) {
      // keep value from config file
    } else {
      rc.model.width_div = width_div_flag;
    }
    if (train_cmd->count("--arch")) rc.model.arch = hpcf::arch_from_name(train_arch);
    rc.train.validate();
    rc.model.validate();

    const auto out_dir = default_out_dir(train_out);
    const auto manifest = hpcf::read_manifest(train_data);
    const auto base_dir = std::filesystem::path(train_data).parent_path();
    const auto train_set =
        hpcf::load_split(manifest, base_dir, hpcf::Split::kTrain, train_augment);
    const auto val_set = hpcf::load_split(manifest, base_dir, hpcf::Split::kVal, false);
    if (train_set.empty()) throw ConfigError("train split of " + train_data + " is empty");

    std::cout << "config: batch_size=" << rc.train.batch_size << " lr=" << rc.train.lr
              << " momentum=" << rc.train.momentum << " weight_decay=" << rc.train.weight_decay
              << " epochs=" << rc.train.epochs << " seed=" << rc.train.seed
              << " arch=" << hpcf::arch_name(rc.model.arch)
              << " width_div=" << rc.model.width_div << "\n";
    std::cout << "data: " << train_set.size() << " train / " << val_set.size()
              << " val samples\n";

    auto model = hpcf::make_model(rc.model, hpcf::Rng(rc.train.seed).stream("init"));
    const auto result = hpcf::train(*model, rc.train, train_set, val_set, out_dir, &std::cout);
    std::cout << "checkpoint: " << result.checkpoint_path.string() << "\n"
              << "log: " << result.log_path.string() << "\n";
    return 0;
  }

  if (*eval_cmd) {
    const auto manifest = hpcf::read_manifest(eval_data);
    const auto base_dir = std::filesystem::path(eval_data).parent_path();
    const auto samples =
        hpcf::load_split(manifest, base_dir, hpcf::split_from_name(eval_split), false);
    if (samples.empty()) {
      throw ConfigError("split '" + eval_split + "' of " + eval_data + " is empty");
    }
    auto model = hpcf::load_checkpoint(eval_ckpt);
    const auto report = hpcf::evaluate(*model, samples, eval_batch);

    std::ostringstream text;
    hpcf::write_report(report, text);
    std::cout << text.str() << hpcf::format_report_table(report);

    std::filesystem::path out_path = eval_out.empty()
                                         ? default_out_dir("") / ("eval_" + eval_split + ".tsv")
                                         : std::filesystem::path(eval_out);
    std::ofstream os(out_path);
    if (!os) throw hpcf::IoError("cannot write report " + out_path.string());
    os << text.str();
    std::cout << "report: " << out_path.string() << "\n";
    return 0;
  }

  if (*predict_cmd) {
    const hpcf::Image i0 = hpcf::read_png(pr_t0);
    const hpcf::Image i1 = hpcf::read_png(pr_t1);
    if (i0.channels != 3 || i1.channels != 3) throw ConfigError("inputs must be 8-bit RGB PNGs");
    if (i0.h != i1.h || i0.w != i1.w) {
      throw ConfigError("input sizes differ: " + std::to_string(i0.w) + "x" +
                        std::to_string(i0.h) + " vs " + std::to_string(i1.w) + "x" +
                        std::to_string(i1.h));
    }
    if (i0.h % 32 != 0 || i0.w % 32 != 0) {
      throw ConfigError("input extents must be divisible by 32 for the 5-level pipeline");
    }
    auto model = hpcf::load_checkpoint(pr_ckpt);
    auto to_batch = [](const hpcf::Image& img) {
      hpcf::Tensor t = hpcf::image_to_tensor(img);
      return hpcf::Tensor::from_data({1, 3, img.h, img.w},
                                     std::vector<double>(t.data().begin(), t.data().end()));
    };
    const auto maps = model->predict_change_map(to_batch(i0), to_batch(i1));
    hpcf::write_png(pr_out, hpcf::change_map_to_image(maps.at(0)));
    std::cout << "wrote " << pr_out << "\n";
    return 0;
  }

  if (*gc_cmd) {
    if (gc_cmd->count("--tol")) {
      gc_opt.op_tol = gc_tol;
      gc_opt.model_tol = gc_tol;
    }
    const auto reports = hpcf::gradcheck_suite(gc_opt);
    bool all_pass = true;
    for (const auto& r : reports) {
      std::cout << r.summary();
      all_pass = all_pass && r.pass;
    }
    if (!all_pass) {
      std::cout << "gradcheck: FAILURES present\n";
      return 1;
    }
    std::cout << "gradcheck: all " << reports.size() << " checks passed\n";
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const hpcf::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const hpcf::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
