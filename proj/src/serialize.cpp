#include "hpcf/serialize.hpp"

#include <set>
#include <string>

namespace hpcf {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const char* what) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError(std::string(what) + ": unknown key '" + it.key() + "'");
    }
  }
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{
      {"arch", arch_name(cfg.arch)},
      {"width_div", cfg.width_div},
      {"leaky_slope", cfg.leaky_slope},
      {"bn_momentum", cfg.bn_momentum},
      {"bn_eps", cfg.bn_eps},
      {"baseline_width_mult", cfg.baseline_width_mult},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"arch", "width_div", "leaky_slope", "bn_momentum", "bn_eps",
                  "baseline_width_mult"},
                 "model config");
  ModelConfig cfg;
  if (j.contains("arch")) cfg.arch = arch_from_name(j.at("arch").get<std::string>());
  if (j.contains("width_div")) cfg.width_div = j.at("width_div").get<int>();
  if (j.contains("leaky_slope")) cfg.leaky_slope = j.at("leaky_slope").get<double>();
  if (j.contains("bn_momentum")) cfg.bn_momentum = j.at("bn_momentum").get<double>();
  if (j.contains("bn_eps")) cfg.bn_eps = j.at("bn_eps").get<double>();
  if (j.contains("baseline_width_mult")) {
    cfg.baseline_width_mult = j.at("baseline_width_mult").get<double>();
  }
  cfg.validate();
  return cfg;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return nlohmann::json{
      {"batch_size", cfg.batch_size},
      {"lr", cfg.lr},
      {"momentum", cfg.momentum},
      {"weight_decay", cfg.weight_decay},
      {"epochs", cfg.epochs},
      {"seed", cfg.seed},
      {"checkpoint_every", cfg.checkpoint_every},
      {"stop_at_f1", cfg.stop_at_f1},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"batch_size", "lr", "momentum", "weight_decay", "epochs", "seed",
                  "checkpoint_every", "stop_at_f1"},
                 "train config");
  TrainConfig cfg;
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
  if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
  if (j.contains("momentum")) cfg.momentum = j.at("momentum").get<double>();
  if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("checkpoint_every")) cfg.checkpoint_every = j.at("checkpoint_every").get<int>();
  if (j.contains("stop_at_f1")) cfg.stop_at_f1 = j.at("stop_at_f1").get<double>();
  cfg.validate();
  return cfg;
}

}  // namespace hpcf
