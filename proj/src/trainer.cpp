#include "qars/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "qars/eval.hpp"

namespace qars {

std::string opt_kind_name(OptKind kind) {
  return kind == OptKind::adam ? "adam" : "adamw";
}

OptKind opt_kind_from_string(const std::string& s) {
  if (s == "adam") return OptKind::adam;
  if (s == "adamw") return OptKind::adamw;
  throw ValueError("unknown optimizer: " + s);
}

void TrainConfig::validate() const {
  if (lr_frozen_phase <= 0.0 || lr_unfrozen_phase <= 0.0) {
    throw ConfigError("train config: learning rates must be positive");
  }
  if (layerwise_decay &&
      (*layerwise_decay <= 0.0 || *layerwise_decay > 1.0)) {
    throw ConfigError("train config: layerwise_decay must be in (0, 1]");
  }
  if (frozen_epochs < 0.0) {
    throw ConfigError("train config: frozen_epochs must be >= 0");
  }
  if (batch_size < 1 || accumulated_batches < 1) {
    throw ConfigError(
        "train config: batch_size and accumulated_batches must be >= 1");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("train config: dropout must be in [0, 1)");
  }
  if (loss != "mse") {
    throw ConfigError("train config: unsupported loss '" + loss + "'");
  }
  if (hidden_units.first == 0 || hidden_units.second == 0) {
    throw ConfigError("train config: hidden_units must be positive");
  }
  if (max_epochs == 0) {
    throw ConfigError("train config: max_epochs must be >= 1");
  }
  if (weight_decay < 0.0) {
    throw ConfigError("train config: weight_decay must be >= 0");
  }
  if (vocab_min_freq == 0) {
    throw ConfigError("train config: vocab_min_freq must be >= 1");
  }
}

namespace {

using nlohmann::json;

const char* const kKnownKeys[] = {
    "optimizer",       "lr_frozen_phase", "lr_unfrozen_phase",
    "layerwise_decay", "frozen_epochs",   "batch_size",
    "accumulated_batches", "dropout",     "loss",
    "hidden_units",    "seed",            "max_epochs",
    "weight_decay",    "encoder",         "vocab_min_freq"};

const char* const kKnownEncoderKeys[] = {"dim", "layers", "heads",
                                         "max_seq_len", "positional"};

}  // namespace

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("train config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(std::begin(kKnownKeys), std::end(kKnownKeys),
                     [&key](const char* k) { return key == k; }) ==
        std::end(kKnownKeys)) {
      throw ConfigError("train config: unknown key '" + key + "'");
    }
  }
  TrainConfig config;
  try {
    if (j.contains("optimizer"))
      config.optimizer = opt_kind_from_string(j["optimizer"]);
    if (j.contains("lr_frozen_phase"))
      config.lr_frozen_phase = j["lr_frozen_phase"];
    if (j.contains("lr_unfrozen_phase"))
      config.lr_unfrozen_phase = j["lr_unfrozen_phase"];
    if (j.contains("layerwise_decay") && !j["layerwise_decay"].is_null())
      config.layerwise_decay = j["layerwise_decay"].get<double>();
    if (j.contains("frozen_epochs")) config.frozen_epochs = j["frozen_epochs"];
    if (j.contains("batch_size")) config.batch_size = j["batch_size"];
    if (j.contains("accumulated_batches"))
      config.accumulated_batches = j["accumulated_batches"];
    if (j.contains("dropout")) config.dropout = j["dropout"];
    if (j.contains("loss")) config.loss = j["loss"];
    if (j.contains("hidden_units")) {
      const auto& hu = j["hidden_units"];
      if (!hu.is_array() || hu.size() != 2) {
        throw ConfigError(
            "train config: hidden_units must be a two-element array");
      }
      config.hidden_units = {hu[0].get<std::size_t>(),
                             hu[1].get<std::size_t>()};
    }
    if (j.contains("seed")) config.seed = j["seed"];
    if (j.contains("max_epochs")) config.max_epochs = j["max_epochs"];
    if (j.contains("weight_decay")) config.weight_decay = j["weight_decay"];
    if (j.contains("vocab_min_freq"))
      config.vocab_min_freq = j["vocab_min_freq"];
    if (j.contains("encoder")) {
      const auto& enc = j["encoder"];
      if (!enc.is_object()) {
        throw ConfigError("train config: encoder must be an object");
      }
      for (const auto& [key, value] : enc.items()) {
        if (std::find_if(std::begin(kKnownEncoderKeys),
                         std::end(kKnownEncoderKeys), [&key](const char* k) {
                           return key == k;
                         }) == std::end(kKnownEncoderKeys)) {
          throw ConfigError("train config: unknown encoder key '" + key + "'");
        }
      }
      if (enc.contains("dim")) config.encoder.dim = enc["dim"];
      if (enc.contains("layers")) config.encoder.layers = enc["layers"];
      if (enc.contains("heads")) config.encoder.heads = enc["heads"];
      if (enc.contains("max_seq_len"))
        config.encoder.max_seq_len = enc["max_seq_len"];
      if (enc.contains("positional"))
        config.encoder.positional =
            positional_from_string(enc["positional"]);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  config.validate();
  return config;
}

TrainConfig TrainConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_json_text(buffer.str());
}

std::string TrainConfig::to_json_text() const {
  json j;
  j["optimizer"] = opt_kind_name(optimizer);
  j["lr_frozen_phase"] = lr_frozen_phase;
  j["lr_unfrozen_phase"] = lr_unfrozen_phase;
  if (layerwise_decay) j["layerwise_decay"] = *layerwise_decay;
  j["frozen_epochs"] = frozen_epochs;
  j["batch_size"] = batch_size;
  j["accumulated_batches"] = accumulated_batches;
  j["dropout"] = dropout;
  j["loss"] = loss;
  j["hidden_units"] = {hidden_units.first, hidden_units.second};
  j["seed"] = seed;
  j["max_epochs"] = max_epochs;
  if (optimizer == OptKind::adamw) j["weight_decay"] = weight_decay;
  j["encoder"] = {{"dim", encoder.dim},
                  {"layers", encoder.layers},
                  {"heads", encoder.heads},
                  {"max_seq_len", encoder.max_seq_len},
                  {"positional", positional_name(encoder.positional)}};
  j["vocab_min_freq"] = vocab_min_freq;
  return j.dump(2) + "\n";
}

double lr_for_group(double base_lr, double decay, std::size_t depth_from_top) {
  if (decay <= 0.0 || decay > 1.0) {
    throw ConfigError("lr_for_group: decay must be in (0, 1]");
  }
  return base_lr * std::pow(decay, static_cast<double>(depth_from_top));
}

std::size_t frozen_steps(double frozen_epochs, std::size_t steps_per_epoch) {
  if (frozen_epochs < 0.0) {
    throw ConfigError("frozen_steps: frozen_epochs must be >= 0");
  }
  return static_cast<std::size_t>(
      std::ceil(frozen_epochs * static_cast<double>(steps_per_epoch)));
}

Optimizer::Optimizer(OptKind kind, std::vector<ParamGroup<float>> groups,
                     double weight_decay, double beta1, double beta2,
                     double epsilon)
    : kind_(kind),
      groups_(std::move(groups)),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon) {
  m_.resize(groups_.size());
  v_.resize(groups_.size());
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    m_[g].resize(groups_[g].params.size());
    v_[g].resize(groups_[g].params.size());
    for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
      m_[g][p].assign(groups_[g].params[p].numel(), 0.0f);
      v_[g][p].assign(groups_[g].params[p].numel(), 0.0f);
    }
  }
  last_lrs_.assign(groups_.size(), 0.0);
}

void Optimizer::step(const std::vector<GroupLr>& group_lrs) {
  if (group_lrs.size() != groups_.size()) {
    throw ConfigError("optimizer: " + std::to_string(group_lrs.size()) +
                      " learning rates for " + std::to_string(groups_.size()) +
                      " groups");
  }
  // Validate before mutating anything so a bad step leaves no trace.
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    if (!group_lrs[g].active) continue;
    for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
      const auto& grad = groups_[g].params[p].grad();
      for (const float gv : grad) {
        if (!std::isfinite(gv)) {
          throw NumericError("optimizer: non-finite gradient in group '" +
                             groups_[g].name + "' parameter " +
                             std::to_string(p) + " at step " +
                             std::to_string(step_count_ + 1));
        }
      }
    }
  }

  ++step_count_;
  const double bias1 =
      1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bias2 =
      1.0 - std::pow(beta2_, static_cast<double>(step_count_));

  for (std::size_t g = 0; g < groups_.size(); ++g) {
    last_lrs_[g] = group_lrs[g].active ? group_lrs[g].lr : 0.0;
    if (!group_lrs[g].active) continue;
    const float lr = static_cast<float>(group_lrs[g].lr);
    for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
      auto& values = groups_[g].params[p].values();
      const auto& grad = groups_[g].params[p].grad();
      auto& m = m_[g][p];
      auto& v = v_[g][p];
      for (std::size_t i = 0; i < values.size(); ++i) {
        const float gv = grad[i];
        m[i] = static_cast<float>(beta1_) * m[i] +
               static_cast<float>(1.0 - beta1_) * gv;
        v[i] = static_cast<float>(beta2_) * v[i] +
               static_cast<float>(1.0 - beta2_) * gv * gv;
        const float m_hat = m[i] / static_cast<float>(bias1);
        const float v_hat = v[i] / static_cast<float>(bias2);
        if (kind_ == OptKind::adamw && weight_decay_ > 0.0) {
          // Decoupled decay, applied independently of the gradient term.
          values[i] -= lr * static_cast<float>(weight_decay_) * values[i];
        }
        values[i] -=
            lr * m_hat / (std::sqrt(v_hat) + static_cast<float>(epsilon_));
      }
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& group : groups_) {
    for (auto& p : group.params) p.zero_grad();
  }
}

std::vector<double> predict_all(const EstimatorModel<float>& model,
                                const std::vector<QERecord>& records) {
  std::vector<double> predictions(records.size());
  [[maybe_unused]] const int threads = thread_count();
#ifdef _OPENMP
#pragma omp parallel for num_threads(threads) schedule(static) \
    if (threads > 1 && records.size() > 1)
#endif
  for (long long i = 0; i < static_cast<long long>(records.size()); ++i) {
    predictions[static_cast<std::size_t>(i)] =
        model.predict(records[static_cast<std::size_t>(i)]);
  }
  return predictions;
}

namespace {

std::vector<std::vector<float>> snapshot_params(
    const EstimatorModel<float>& model) {
  std::vector<std::vector<float>> snap;
  for (const auto& [name, tensor] : model.named_params()) {
    snap.push_back(tensor.values());
  }
  return snap;
}

void restore_params(EstimatorModel<float>& model,
                    const std::vector<std::vector<float>>& snap) {
  auto named = model.named_params();
  for (std::size_t i = 0; i < named.size(); ++i) {
    named[i].second.values() = snap[i];
  }
}

std::vector<GroupLr> schedule_lrs(const TrainConfig& config, bool frozen,
                                  std::size_t group_count) {
  // Groups: [head, embeddings, layer_1, ..., layer_L].
  std::vector<GroupLr> lrs(group_count);
  if (frozen) {
    lrs[0] = {true, config.lr_frozen_phase};
    for (std::size_t g = 1; g < group_count; ++g) lrs[g] = {false, 0.0};
    return lrs;
  }
  lrs[0] = {true, config.lr_unfrozen_phase};
  const double decay = config.layerwise_decay.value_or(1.0);
  for (std::size_t g = 1; g < group_count; ++g) {
    // layer_L is group_count-1 (depth 0); embeddings is group 1 (depth L).
    const std::size_t depth = group_count - 1 - g;
    lrs[g] = {true, lr_for_group(config.lr_unfrozen_phase, decay, depth)};
  }
  return lrs;
}

}  // namespace

TrainReport train(EstimatorModel<float>& model, const TrainConfig& config,
                  const std::vector<QERecord>& train_set,
                  const std::vector<QERecord>& dev_set,
                  const std::filesystem::path& out_dir,
                  const TrainHooks* hooks) {
  config.validate();
  if (train_set.empty() || dev_set.empty()) {
    throw ConfigError("train: datasets must be non-empty");
  }
  {
    std::set<double> distinct;
    for (const auto& record : dev_set) distinct.insert(record.score);
    if (distinct.size() < 2) {
      throw ConfigError(
          "train: dev set has constant gold scores, Pearson is undefined");
    }
  }

  std::filesystem::create_directories(out_dir);

  const std::size_t n = train_set.size();
  const std::size_t micro_per_epoch =
      (n + config.batch_size - 1) / config.batch_size;
  const std::size_t steps_per_epoch =
      (micro_per_epoch + config.accumulated_batches - 1) /
      config.accumulated_batches;
  const std::size_t frozen_until =
      frozen_steps(config.frozen_epochs, steps_per_epoch);

  Optimizer optimizer(config.optimizer, model.param_groups(),
                      config.weight_decay);
  Rng shuffle_rng(config.seed, /*stream=*/11);
  Rng dropout_rng(config.seed, /*stream=*/13);

  std::vector<double> dev_gold;
  dev_gold.reserve(dev_set.size());
  for (const auto& record : dev_set) dev_gold.push_back(record.score);

  TrainReport report;
  std::vector<std::vector<float>> best_params;
  double best_pearson = 0.0;
  std::size_t global_step = 0;

  std::ostringstream log;
  const std::size_t records_per_step =
      config.batch_size * config.accumulated_batches;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    double epoch_sq_error = 0.0;
    std::size_t cursor = 0;
    while (cursor < n) {
      const std::size_t take = std::min(records_per_step, n - cursor);
      const bool frozen = global_step + 1 <= frozen_until;
      // Frozen encoders skip backward work entirely.
      for (auto& group : model.encoder().param_groups()) {
        for (auto& p : group.params) p.set_requires_grad(!frozen);
      }
      optimizer.zero_grad();
      // Per-record losses scaled by the effective batch size make the
      // accumulated step exactly equal to one large averaged batch.
      const float inv_batch = 1.0f / static_cast<float>(take);
      DropoutCtx dropout_ctx{config.dropout, &dropout_rng};
      const DropoutCtx* ctx = config.dropout > 0.0 ? &dropout_ctx : nullptr;
      for (std::size_t b = 0; b < take; ++b) {
        const QERecord& record = train_set[order[cursor + b]];
        Tensor<float> pred = model.predict_tensor(record.input(), ctx);
        Tensor<float> target = Tensor<float>::scalar(
            static_cast<float>(normalize_score(record.score)));
        Tensor<float> err = sub(pred, target);
        Tensor<float> loss = scale(mul(err, err), inv_batch);
        backward(loss);
        const double e = static_cast<double>(err.item());
        epoch_sq_error += e * e;
      }
      const auto lrs =
          schedule_lrs(config, frozen, optimizer.group_count());
      optimizer.step(lrs);
      ++global_step;
      if (hooks != nullptr && hooks->after_step) {
        hooks->after_step({global_step, frozen, lrs});
      }
      cursor += take;
    }

    // Leave the model grad-ready regardless of where the phase ended.
    for (auto& group : model.encoder().param_groups()) {
      for (auto& p : group.params) p.set_requires_grad(true);
    }

    EpochStats stats;
    stats.train_mse = epoch_sq_error / static_cast<double>(n);
    stats.dev_pearson = pearson(predict_all(model, dev_set), dev_gold);
    report.epochs.push_back(stats);
    log << epoch << '\t' << fmt::format("{:.6f}", stats.train_mse) << '\t'
        << fmt::format("{:.6f}", stats.dev_pearson) << '\n';
    if (hooks != nullptr && hooks->after_epoch) {
      hooks->after_epoch(epoch, stats);
    }

    if (report.best_epoch == 0 || stats.dev_pearson > best_pearson) {
      best_pearson = stats.dev_pearson;
      report.best_epoch = epoch;
      best_params = snapshot_params(model);
    }
  }

  restore_params(model, best_params);
  report.best_checkpoint = out_dir / "best";
  save_estimator(model, report.best_checkpoint);
  {
    std::ofstream log_file(out_dir / "train_log.tsv", std::ios::binary);
    if (!log_file) {
      throw FormatError("cannot write " + (out_dir / "train_log.tsv").string());
    }
    log_file << log.str();
  }
  return report;
}

}  // namespace qars
