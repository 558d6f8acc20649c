#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ews/config.hpp"
#include "ews/controller.hpp"
#include "ews/dataset.hpp"
#include "ews/metrics.hpp"
#include "ews/model.hpp"

namespace ews {

// Where the per-step subnet comes from. kNone disables the distillation
// branch entirely (the vanilla / dropout baselines).
enum class SubnetSource { kNone, kController, kUniform, kL1 };

std::string subnet_source_name(SubnetSource s);
SubnetSource subnet_source_from_name(const std::string& name);

struct TrainConfig {
  double lambda = 1.0;          // weight of the distillation term
  int controller_interval = 10;  // K: policy update every K model steps
  double rho = 0.7;
  int batch_size = 128;
  int controller_batch = 8;     // C: subnets per policy update
  double lr_model = 0.05;
  double lr_controller = 3.5e-4;
  int epochs = 40;
  std::uint64_t seed = 1;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  SubnetSource subnet_source = SubnetSource::kController;
  double dropout_rate = 0.0;    // dropout baseline only
  int groups = 4;
  int controller_hidden = 64;
  double val_fraction = 0.1;
  int log_every = 50;
  std::string augmentation = "none";  // none | hflip | shift4
  std::string run_id = "run";

  // Empty when the config satisfies its invariants.
  std::string validate() const;
};

Config train_config_to_config(const TrainConfig& cfg);
TrainConfig train_config_from_config(const Config& cfg);

struct LossParts {
  float total = 0.0f;
  float ce = 0.0f;
  float kl = 0.0f;
};

// The per-step objective: CE of the full model plus lambda times the KL
// from the full model's (detached) predictions to the subnet's, both on the
// same batch. subnet == nullptr or lambda == 0 drops the second term.
// When grads is non-null the parameter gradient is accumulated into it and
// full_trace receives the unmasked train-mode trace (for running-stat
// updates). Dropout applies to the full-model branch only.
LossParts ews_loss(const MaskableModel& model, const SubnetSpec* subnet,
                   const Tensor& x, const std::vector<int>& labels,
                   double lambda, Mode mode, GradSet* grads = nullptr,
                   ForwardTrace* full_trace = nullptr,
                   float dropout_rate = 0.0f, Rng* dropout_rng = nullptr);

// Batch image -> image augmentation applied before the forward pass.
using Augmentation = std::function<void(Tensor&, Rng&)>;
Augmentation make_augmentation(const std::string& name);

// Percent test error of the (optionally masked) model, eval-forward mode.
double evaluate_error(const MaskableModel& model, const Dataset& ds,
                      const SubnetSpec* subnet = nullptr,
                      int batch_size = 256);

// Owns one training run's mutable pieces: SGD velocity, the policy, the
// step counter and the per-step random streams.
class Trainer {
 public:
  Trainer(MaskableModel& model, const TrainConfig& cfg,
          long long total_steps);

  // One model update (Alg. steps: possibly a policy update first, then
  // sample a subnet, take the combined-loss SGD step).
  LossParts train_step(const Tensor& x, const std::vector<int>& labels);

  // One policy update against the current model on the given batch:
  // samples C subnets, rewards each with its negated batch accuracy
  // (eval-forward), and applies REINFORCE. Returns the mean subnet
  // accuracy of the batch of subnets.
  double controller_step(const Tensor& x, const std::vector<int>& labels);

  long long step() const { return step_; }
  long long controller_updates() const { return controller_updates_; }
  double current_lr() const;  // cosine decay over total_steps
  Controller* controller() { return controller_.get(); }
  GradSet& velocity() { return velocity_; }
  MaskableModel& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }

  // Resume plumbing: restore the counters (the caller restores tensors).
  void set_step(long long step);
  void set_controller_updates(long long n) { controller_updates_ = n; }

 private:
  SubnetSpec pick_subnet();

  MaskableModel& model_;
  TrainConfig cfg_;
  long long total_steps_;
  long long step_ = 0;
  long long controller_updates_ = 0;
  GradSet velocity_;
  GradSet grads_;
  std::unique_ptr<Controller> controller_;
};

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  double final_clean_error = 100.0;
  double best_val_error = 100.0;
  long long controller_updates = 0;
  double wallclock_s = 0.0;
  std::string last_checkpoint;  // empty when run_dir was empty
  std::string best_checkpoint;
};

// Full training run (initializes the model from the seed). When run_dir is
// non-empty, checkpoints and the metrics log land there and an interrupted
// run resumes from run_dir/last.ckpt.
TrainResult train(MaskableModel& model, const TrainConfig& cfg,
                  const Dataset& train_set, const Dataset& test_set,
                  const std::string& run_dir = "");

}  // namespace ews
