// trainer.hpp -- the optimization loop: Adam/AdamW with per-group learning
// rates, gradual unfreezing, layer-wise decay, gradient accumulation, and
// dev-Pearson checkpoint selection.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qars/data.hpp"
#include "qars/encoder.hpp"
#include "qars/estimator.hpp"

namespace qars {

enum class OptKind { adam, adamw };

std::string opt_kind_name(OptKind kind);
OptKind opt_kind_from_string(const std::string& s);

struct TrainConfig {
  OptKind optimizer = OptKind::adam;
  double lr_frozen_phase = 3e-5;
  double lr_unfrozen_phase = 1e-5;
  std::optional<double> layerwise_decay;  // absent means no decay
  double frozen_epochs = 8.0;  // fractional values freeze part of epoch one
  std::size_t batch_size = 4;
  std::size_t accumulated_batches = 2;
  double dropout = 0.15;
  std::string loss = "mse";
  std::pair<std::size_t, std::size_t> hidden_units{64, 32};
  std::uint64_t seed = 1;
  std::size_t max_epochs = 30;
  double weight_decay = 0.01;  // AdamW only

  // Artifact plumbing: the desk-scale encoder built when training starts
  // from scratch. vocab_size is filled in from the training data.
  EncoderConfig encoder;
  std::size_t vocab_min_freq = 1;

  void validate() const;
  static TrainConfig from_json_file(const std::filesystem::path& path);
  static TrainConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

// base_lr * decay^depth, depth counted from the topmost encoder group.
// The regressor head always runs at base_lr (no depth applied).
double lr_for_group(double base_lr, double decay, std::size_t depth_from_top);

// ceil(frozen_epochs * steps_per_epoch) optimizer steps during which the
// encoder groups receive no updates.
std::size_t frozen_steps(double frozen_epochs, std::size_t steps_per_epoch);

struct GroupLr {
  bool active = true;
  double lr = 0.0;
};

// One optimizer over all parameter groups. Inactive groups are skipped
// entirely for a step: no moment update, no decay, bitwise-unchanged values.
// The step counter advances once per step(), not per micro-batch.
class Optimizer {
 public:
  Optimizer(OptKind kind, std::vector<ParamGroup<float>> groups,
            double weight_decay = 0.01, double beta1 = 0.9,
            double beta2 = 0.999, double epsilon = 1e-8);

  // Throws NumericError (naming group, parameter and step) on non-finite
  // gradients; the step is aborted before touching any value.
  void step(const std::vector<GroupLr>& group_lrs);
  void zero_grad();

  std::size_t step_count() const { return step_count_; }
  std::size_t group_count() const { return groups_.size(); }
  // Learning rates applied by the most recent step; inactive groups report 0.
  const std::vector<double>& last_group_lrs() const { return last_lrs_; }

 private:
  OptKind kind_;
  std::vector<ParamGroup<float>> groups_;
  std::vector<std::vector<std::vector<float>>> m_, v_;  // [group][param][i]
  double weight_decay_, beta1_, beta2_, epsilon_;
  std::size_t step_count_ = 0;
  std::vector<double> last_lrs_;
};

struct EpochStats {
  double train_mse = 0.0;   // normalized-score scale
  double dev_pearson = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // 1-based; ties resolve to the earliest
  std::filesystem::path best_checkpoint;
};

struct StepInfo {
  std::size_t step = 0;  // 1-based optimizer step index
  bool frozen_phase = false;
  std::vector<GroupLr> group_lrs;  // [head, embeddings, layer_1, ...]
};

struct TrainHooks {
  std::function<void(const StepInfo&)> after_step;
  std::function<void(std::size_t epoch, const EpochStats&)> after_epoch;
};

// Epochs of seeded shuffled batches. Each optimizer step consumes
// batch_size * accumulated_batches records; per-record squared errors are
// scaled by the effective batch size so the step equals one large averaged
// batch exactly. During the frozen phase only the head updates, at
// lr_frozen_phase; afterwards every group updates at lr_unfrozen_phase with
// layer-wise decay. After each epoch dev Pearson decides the best checkpoint,
// written to out_dir/best; the epoch log goes to out_dir/train_log.tsv.
// The model is left holding the best parameters.
TrainReport train(EstimatorModel<float>& model, const TrainConfig& config,
                  const std::vector<QERecord>& train_set,
                  const std::vector<QERecord>& dev_set,
                  const std::filesystem::path& out_dir,
                  const TrainHooks* hooks = nullptr);

// Dev predictions in input order (parallel over records when threads > 1).
std::vector<double> predict_all(const EstimatorModel<float>& model,
                                const std::vector<QERecord>& records);

}  // namespace qars
