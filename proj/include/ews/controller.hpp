#pragma once

#include <cstdint>
#include <vector>

#include "ews/rng.hpp"
#include "ews/subnet.hpp"
#include "ews/topology.hpp"

namespace ews {

struct ControllerConfig {
  int hidden = 64;
  double lr = 3.5e-4;
  double baseline_decay = 0.9;
  double rho = 0.7;
  int groups = 4;
  double init_scale = 0.1;
};

// Recurrent policy over subnets. One LSTM step per selection: for every
// block it picks the kept paths, then for every layer on a kept path the
// kept channel groups, feeding each pick back in as the next input token.
// Subsets are emitted in ascending index order and each pick's softmax is
// restricted to the indices that can still complete an ascending sequence,
// so the probability of a subnet is exactly the probability of its one
// canonical sample path and the distribution over subnets is normalized.
//
// All policy math is double precision so that enumeration-based gradient
// checks hold to tight tolerances.
class Controller {
 public:
  Controller(const ModelTopology& topo, const ControllerConfig& cfg);

  // Reinitializes all policy parameters (small uniform weights, zero
  // biases) and resets the Adam moments and the reward baseline.
  void init_params(Rng& rng);

  const ControllerConfig& config() const { return cfg_; }

  // Flat parameter vector (embeddings, LSTM, output heads).
  std::vector<double>& params() { return theta_; }
  const std::vector<double>& params() const { return theta_; }

  // Draws one subnet from the current policy. If out_log_prob is given it
  // receives the log probability of the draw.
  SubnetSpec sample(Rng& rng, double* out_log_prob = nullptr) const;

  // Log probability of a concrete subnet under the current policy. The
  // spec must be valid for the controller's topology, rho and groups.
  double log_prob(const SubnetSpec& spec) const;

  // d log_prob(spec) / d theta, same layout as params(). Overwrites grad.
  double grad_log_prob(const SubnetSpec& spec,
                       std::vector<double>& grad) const;

  // One REINFORCE step from a batch of (subnet, reward) pairs: ascends
  // mean (r - baseline) * grad log_prob via Adam, then advances the
  // exponential-moving-average baseline. Returns the baseline that was
  // used for the step.
  double reinforce_update(const std::vector<SubnetSpec>& specs,
                          const std::vector<double>& rewards);

  double baseline() const { return baseline_; }
  bool baseline_initialized() const { return baseline_init_; }
  std::int64_t update_count() const { return adam_t_; }

  // Serialization of the full controller state (params, Adam moments,
  // baseline) as structured text.
  std::string state_to_text() const;
  void state_from_text(const std::string& text);

 private:
  struct StepCache;
  ModelTopology topo_;
  ControllerConfig cfg_;
  int max_paths_ = 0;
  int n_tokens_ = 0;
  // flat layout offsets
  std::size_t off_embed_, off_wx_, off_wh_, off_b_, off_wp_, off_bp_,
      off_wg_, off_bg_;
  std::vector<double> theta_;
  // Adam state
  std::vector<double> adam_m_, adam_v_;
  std::int64_t adam_t_ = 0;
  double baseline_ = 0.0;
  bool baseline_init_ = false;

  // Runs the policy once. When `rng` is non-null the picks are sampled and
  // written into `spec`; otherwise the picks are read from `spec`. When
  // `caches` is non-null every step's activations are recorded for
  // backprop. Returns the total log probability.
  double run(SubnetSpec& spec, Rng* rng, std::vector<StepCache>* caches) const;

  void backward(const std::vector<StepCache>& caches,
                std::vector<double>& grad) const;
};

}  // namespace ews
