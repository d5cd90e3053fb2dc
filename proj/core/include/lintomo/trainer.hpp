#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lintomo/datastore.hpp"
#include "lintomo/network.hpp"
#include "lintomo/objective.hpp"

namespace lintomo {

enum class LossMode { kLoss1Only, kPilf };

struct TrainConfig {
  double lr0 = 1e-4;
  double lr_min = 1e-5;
  int period = 50;
  int max_epochs = 50;
  int batch_size = 256;
  int patience = 25;
  double lambda = 1e-4;
  double c1 = 0.0;
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::kLoss1Only;
  bool detach_weight = true;
  // Hard cap on optimizer steps; 0 means no cap.
  std::int64_t max_steps = 0;

  void validate() const;  // InvalidConfig
  LossConfig loss_config() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);  // InvalidConfig

// lr_min + (lr0 - lr_min) (1 + cos(pi min(epoch, period) / period)) / 2
double cosine_lr(int epoch, const TrainConfig& cfg);

struct StepRecord {
  int epoch = 0;
  std::int64_t step = 0;  // 1-based global step
  double loss1 = 0.0;
  double loss2 = 0.0;
  double w2 = 0.0;
  double total = 0.0;
  bool degenerate = false;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean of the epoch's step losses
  double valid_loss = 0.0;
  double w2 = 0.0;          // mean over the epoch's steps
  double E1_valid = 0.0;
  double E2_valid = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_valid_loss = 0.0;
  std::string stop_reason;  // "max_epochs", "early_stop" or "max_steps"
  std::int64_t steps = 0;

  bool operator==(const TrainHistory&) const = default;
};

void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);
void to_json(nlohmann::json& j, const TrainHistory& h);
void from_json(const nlohmann::json& j, TrainHistory& h);

// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  int next_epoch = 0;
  int stale_epochs = 0;
  TrainHistory history;
  Weights current;
  Weights best;
  std::vector<NamedArray> adam_m;
  std::vector<NamedArray> adam_v;
};

void save_train_state(const std::filesystem::path& path, const TrainState& state,
                      const ModelSpec& spec, const TrainConfig& cfg);
TrainState load_train_state(const std::filesystem::path& path, const ModelSpec& spec);

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  // Replaces the computed validation loss; used to script early stopping.
  std::function<double(int epoch, double valid_loss)> valid_loss_override;
  std::function<void(const TrainState&)> on_epoch_end;
};

// Trains in place and leaves the best-validation weights in `model`. An
// unallocated model is initialized from cfg.seed first. Throws
// ShapeMismatch and NonFiniteLoss (naming the epoch and batch).
TrainHistory train(Model<float>& model, const Dataset& train_set, const Dataset& valid_set,
                   const ContributionMatrix& cmatrix, const TrainConfig& cfg,
                   const TrainHooks& hooks = {}, const TrainState* resume = nullptr);

// Eval-mode predictions, (m, numz*numr).
std::vector<float> predict(Model<float>& model, const Dataset& data,
                           const ContributionMatrix& cmatrix, int batch_size = 256);

// The composite objective used for early stopping, evaluated on a whole set.
double validation_loss(Model<float>& model, const Dataset& data,
                       const ContributionMatrix& cmatrix, const TrainConfig& cfg);

struct EvalReport {
  std::string dataset;
  std::string model;
  double E1 = 0.0;
  double E2 = 0.0;
  std::vector<double> eps1_per_sample;
  std::vector<double> eps2_per_sample;
  // First `samples` entries only.
  std::vector<std::vector<double>> eps1_maps;
  std::vector<std::vector<double>> eps2_vectors;
  std::vector<std::vector<double>> back_projections;
};

EvalReport evaluate(Model<float>& model, const Dataset& test_set,
                    const ContributionMatrix& cmatrix, std::size_t samples = 0,
                    const std::string& dataset_name = "test");
// Scores precomputed predictions, e.g. labels injected as an oracle.
EvalReport evaluate_predictions(std::span<const float> preds, const Dataset& test_set,
                                const ContributionMatrix& cmatrix, std::size_t samples,
                                const std::string& dataset_name, const std::string& model_name);

nlohmann::json report_to_json(const EvalReport& report, bool per_sample);
// Columns: dataset,model,E1,E2
std::string reports_to_csv(std::span<const EvalReport> reports);

}  // namespace lintomo
