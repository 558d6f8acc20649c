#include "ews/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "ews/checkpoint.hpp"
#include "ews/losses.hpp"

namespace ews {

namespace fs = std::filesystem;

std::string subnet_source_name(SubnetSource s) {
  switch (s) {
    case SubnetSource::kNone: return "none";
    case SubnetSource::kController: return "controller";
    case SubnetSource::kUniform: return "uniform_random";
    case SubnetSource::kL1: return "l1";
  }
  return "none";
}

SubnetSource subnet_source_from_name(const std::string& name) {
  if (name == "none") return SubnetSource::kNone;
  if (name == "controller") return SubnetSource::kController;
  if (name == "uniform_random") return SubnetSource::kUniform;
  if (name == "l1") return SubnetSource::kL1;
  throw std::invalid_argument("unknown subnet source: " + name);
}

std::string TrainConfig::validate() const {
  if (lambda < 0) return "lambda must be non-negative";
  if (controller_interval < 1) return "controller_interval must be >= 1";
  if (!(rho > 0.0 && rho <= 1.0)) return "rho must be in (0, 1]";
  if (batch_size < 1) return "batch_size must be positive";
  if (controller_batch < 1) return "controller_batch must be positive";
  if (epochs < 0) return "epochs must be non-negative";
  if ((subnet_source == SubnetSource::kNone) != (lambda == 0.0))
    return "subnet_source=none requires lambda=0 and vice versa";
  if (dropout_rate < 0.0 || dropout_rate > 1.0)
    return "dropout_rate must be in [0, 1]";
  if (dropout_rate > 0.0 && subnet_source != SubnetSource::kNone)
    return "dropout is a baseline option; use subnet_source=none";
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    return "val_fraction must be in [0, 1)";
  if (log_every < 1) return "log_every must be positive";
  return "";
}

Config train_config_to_config(const TrainConfig& cfg) {
  Config c;
  std::ostringstream tmp;
  auto num = [&tmp](double v) {
    tmp.str("");
    tmp.precision(17);
    tmp << v;
    return tmp.str();
  };
  c.set("lambda", num(cfg.lambda));
  c.set("controller_interval", std::to_string(cfg.controller_interval));
  c.set("rho", num(cfg.rho));
  c.set("batch_size", std::to_string(cfg.batch_size));
  c.set("controller_batch", std::to_string(cfg.controller_batch));
  c.set("lr_model", num(cfg.lr_model));
  c.set("lr_controller", num(cfg.lr_controller));
  c.set("epochs", std::to_string(cfg.epochs));
  c.set("seed", std::to_string(cfg.seed));
  c.set("weight_decay", num(cfg.weight_decay));
  c.set("momentum", num(cfg.momentum));
  c.set("subnet_source", subnet_source_name(cfg.subnet_source));
  c.set("dropout_rate", num(cfg.dropout_rate));
  c.set("groups", std::to_string(cfg.groups));
  c.set("controller_hidden", std::to_string(cfg.controller_hidden));
  c.set("val_fraction", num(cfg.val_fraction));
  c.set("log_every", std::to_string(cfg.log_every));
  c.set("augmentation", cfg.augmentation);
  c.set("run_id", cfg.run_id);
  return c;
}

TrainConfig train_config_from_config(const Config& c) {
  TrainConfig cfg;
  cfg.lambda = c.real("lambda", cfg.lambda);
  cfg.controller_interval = static_cast<int>(
      c.integer("controller_interval", cfg.controller_interval));
  cfg.rho = c.real("rho", cfg.rho);
  cfg.batch_size = static_cast<int>(c.integer("batch_size", cfg.batch_size));
  cfg.controller_batch =
      static_cast<int>(c.integer("controller_batch", cfg.controller_batch));
  cfg.lr_model = c.real("lr_model", cfg.lr_model);
  cfg.lr_controller = c.real("lr_controller", cfg.lr_controller);
  cfg.epochs = static_cast<int>(c.integer("epochs", cfg.epochs));
  cfg.seed = static_cast<std::uint64_t>(
      c.integer("seed", static_cast<long long>(cfg.seed)));
  cfg.weight_decay = c.real("weight_decay", cfg.weight_decay);
  cfg.momentum = c.real("momentum", cfg.momentum);
  cfg.subnet_source = subnet_source_from_name(
      c.str("subnet_source", subnet_source_name(cfg.subnet_source)));
  cfg.dropout_rate = c.real("dropout_rate", cfg.dropout_rate);
  cfg.groups = static_cast<int>(c.integer("groups", cfg.groups));
  cfg.controller_hidden = static_cast<int>(
      c.integer("controller_hidden", cfg.controller_hidden));
  cfg.val_fraction = c.real("val_fraction", cfg.val_fraction);
  cfg.log_every = static_cast<int>(c.integer("log_every", cfg.log_every));
  cfg.augmentation = c.str("augmentation", cfg.augmentation);
  cfg.run_id = c.str("run_id", cfg.run_id);
  return cfg;
}

LossParts ews_loss(const MaskableModel& model, const SubnetSpec* subnet,
                   const Tensor& x, const std::vector<int>& labels,
                   double lambda, Mode mode, GradSet* grads,
                   ForwardTrace* full_trace, float dropout_rate,
                   Rng* dropout_rng) {
  ForwardTrace local;
  ForwardTrace& ft = full_trace != nullptr ? *full_trace : local;
  model.forward(x, nullptr, mode, ft, dropout_rate, dropout_rng);
  LossParts parts;
  Tensor dce;
  parts.ce = cross_entropy(ft.logits, labels, grads != nullptr ? &dce : nullptr);
  if (grads != nullptr) model.backward(ft, dce, *grads);
  if (subnet != nullptr && lambda > 0.0) {
    ForwardTrace mt;
    model.forward(x, subnet, mode, mt);
    Tensor dkl;
    // the teacher side (full-model logits) is a constant target: the
    // gradient flows only through the subnet branch
    parts.kl = kl_divergence(ft.logits, mt.logits,
                             grads != nullptr ? &dkl : nullptr);
    if (grads != nullptr) {
      for (std::size_t i = 0; i < dkl.size(); ++i)
        dkl[i] *= static_cast<float>(lambda);
      model.backward(mt, dkl, *grads);
    }
  }
  parts.total = parts.ce + static_cast<float>(lambda) * parts.kl;
  return parts;
}

Augmentation make_augmentation(const std::string& name) {
  if (name == "none" || name.empty()) return Augmentation{};
  if (name == "hflip") {
    return [](Tensor& x, Rng& rng) {
      const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
      for (int i = 0; i < n; ++i) {
        if (rng.uniform() >= 0.5) continue;
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < h; ++y)
            for (int xg = 0; xg < w / 2; ++xg)
              std::swap(x.at(i, ch, y, xg), x.at(i, ch, y, w - 1 - xg));
      }
    };
  }
  if (name == "shift4") {
    // pad-4-and-crop translation, zero fill
    return [](Tensor& x, Rng& rng) {
      const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
      Tensor shifted({1, c, h, w});
      for (int i = 0; i < n; ++i) {
        const int dy = rng.uniform_int(9) - 4;
        const int dx = rng.uniform_int(9) - 4;
        if (dy == 0 && dx == 0) continue;
        std::fill(shifted.data(), shifted.data() + shifted.size(), 0.0f);
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            for (int xg = 0; xg < w; ++xg) {
              const int sx = xg + dx;
              if (sx < 0 || sx >= w) continue;
              shifted.at(0, ch, y, xg) = x.at(i, ch, sy, sx);
            }
          }
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < h; ++y)
            for (int xg = 0; xg < w; ++xg)
              x.at(i, ch, y, xg) = shifted.at(0, ch, y, xg);
      }
    };
  }
  throw std::invalid_argument("unknown augmentation: " + name);
}

double evaluate_error(const MaskableModel& model, const Dataset& ds,
                      const SubnetSpec* subnet, int batch_size) {
  if (ds.size() == 0) throw std::invalid_argument("empty evaluation set");
  int correct = 0;
  std::vector<int> idx;
  ForwardTrace trace;
  for (int start = 0; start < ds.size(); start += batch_size) {
    const int stop = std::min(ds.size(), start + batch_size);
    idx.clear();
    for (int i = start; i < stop; ++i) idx.push_back(i);
    Tensor x = ds.gather(idx);
    model.forward(x, subnet, Mode::kEval, trace);
    for (int r = 0; r < stop - start; ++r)
      if (argmax_row(trace.logits, r) == ds.labels[static_cast<std::size_t>(
                                            idx[static_cast<std::size_t>(r)])])
        ++correct;
  }
  return 100.0 * (1.0 - static_cast<double>(correct) / ds.size());
}

Trainer::Trainer(MaskableModel& model, const TrainConfig& cfg,
                 long long total_steps)
    : model_(model), cfg_(cfg), total_steps_(std::max<long long>(1, total_steps)) {
  const std::string problem = cfg.validate();
  if (!problem.empty()) throw std::invalid_argument(problem);
  velocity_.init_like(model.params());
  grads_.init_like(model.params());
  if (cfg_.subnet_source == SubnetSource::kController) {
    ControllerConfig cc;
    cc.hidden = cfg_.controller_hidden;
    cc.lr = cfg_.lr_controller;
    cc.rho = cfg_.rho;
    cc.groups = cfg_.groups;
    controller_ = std::make_unique<Controller>(model.topology(), cc);
    Rng init(cfg_.seed, "controller-init", 0);
    controller_->init_params(init);
  }
}

double Trainer::current_lr() const {
  const double frac = static_cast<double>(step_) /
                      static_cast<double>(total_steps_);
  constexpr double kPi = 3.14159265358979323846;
  return cfg_.lr_model * 0.5 * (1.0 + std::cos(kPi * frac));
}

void Trainer::set_step(long long step) { step_ = step; }

SubnetSpec Trainer::pick_subnet() {
  switch (cfg_.subnet_source) {
    case SubnetSource::kController: {
      Rng rng(cfg_.seed, "subnet-policy", static_cast<std::uint64_t>(step_));
      return controller_->sample(rng);
    }
    case SubnetSource::kUniform: {
      Rng rng(cfg_.seed, "subnet-uniform", static_cast<std::uint64_t>(step_));
      return sample_uniform_subnet(model_.topology(), cfg_.rho, cfg_.groups,
                                   rng);
    }
    case SubnetSource::kL1:
      return subnet_from_l1(model_, cfg_.rho, cfg_.groups);
    case SubnetSource::kNone:
      break;
  }
  throw std::logic_error("pick_subnet called without a subnet source");
}

double Trainer::controller_step(const Tensor& x,
                                const std::vector<int>& labels) {
  Rng rng(cfg_.seed, "controller-sample",
          static_cast<std::uint64_t>(controller_updates_));
  std::vector<SubnetSpec> specs;
  std::vector<double> rewards;
  double mean_acc = 0.0;
  ForwardTrace trace;
  for (int i = 0; i < cfg_.controller_batch; ++i) {
    specs.push_back(controller_->sample(rng));
    model_.forward(x, &specs.back(), Mode::kEval, trace);
    const double acc = accuracy(trace.logits, labels);
    mean_acc += acc;
    rewards.push_back(-acc);  // weak subnets get high reward
  }
  controller_->reinforce_update(specs, rewards);
  ++controller_updates_;
  return mean_acc / cfg_.controller_batch;
}

LossParts Trainer::train_step(const Tensor& x,
                              const std::vector<int>& labels) {
  if (cfg_.subnet_source == SubnetSource::kController &&
      step_ % cfg_.controller_interval == 0)
    controller_step(x, labels);

  SubnetSpec spec;
  const SubnetSpec* sp = nullptr;
  if (cfg_.subnet_source != SubnetSource::kNone && cfg_.lambda > 0.0) {
    spec = pick_subnet();
    sp = &spec;
  }

  grads_.zero();
  ForwardTrace full_trace;
  Rng drop_rng(cfg_.seed, "dropout", static_cast<std::uint64_t>(step_));
  Rng* dr = cfg_.dropout_rate > 0.0 ? &drop_rng : nullptr;
  const LossParts parts =
      ews_loss(model_, sp, x, labels, cfg_.lambda, Mode::kTrain, &grads_,
               &full_trace, static_cast<float>(cfg_.dropout_rate), dr);
  model_.update_running_stats(full_trace);

  const float lr = static_cast<float>(current_lr());
  const float mom = static_cast<float>(cfg_.momentum);
  const float wd = static_cast<float>(cfg_.weight_decay);
  ParamSet& params = model_.params();
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    Tensor& p = params.values[i];
    Tensor& v = velocity_.grads[i];
    Tensor& g = grads_.grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = mom * v[j] + g[j] + wd * p[j];
      p[j] -= lr * v[j];
    }
  }
  ++step_;
  return parts;
}

namespace {

Dataset subset_of(const Dataset& ds, const std::vector<int>& indices) {
  Dataset out;
  out.height = ds.height;
  out.width = ds.width;
  out.channels = ds.channels;
  out.num_classes = ds.num_classes;
  const std::size_t sz = ds.image_scalars();
  out.images.reserve(indices.size() * sz);
  for (int i : indices) {
    const float* img = ds.image(i);
    out.images.insert(out.images.end(), img, img + sz);
    out.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

Checkpoint make_checkpoint(const MaskableModel& model, const Trainer& tr,
                           const TrainConfig& cfg, long long step) {
  Checkpoint cp;
  cp.topology_text = topology_to_text(model.topology());
  cp.config_text = train_config_to_config(cfg).to_text();
  cp.step = step;
  const ParamSet& p = model.params();
  for (std::size_t i = 0; i < p.names.size(); ++i)
    cp.params.emplace_back(p.names[i], p.values[i]);
  const ParamSet& ns = model.norm_state();
  for (std::size_t i = 0; i < ns.names.size(); ++i)
    cp.norm_state.emplace_back(ns.names[i], ns.values[i]);
  const GradSet& vel = const_cast<Trainer&>(tr).velocity();
  for (std::size_t i = 0; i < p.names.size(); ++i)
    cp.optimizer.emplace_back(p.names[i], vel.grads[i]);
  const Controller* ctl = const_cast<Trainer&>(tr).controller();
  if (ctl != nullptr) cp.controller_text = ctl->state_to_text();
  return cp;
}

void restore_tensors(const std::vector<std::pair<std::string, Tensor>>& src,
                     ParamSet& dst, const char* what) {
  for (const auto& [name, t] : src) {
    const int id = dst.find(name);
    if (id < 0)
      throw std::runtime_error(std::string("checkpoint ") + what +
                               " has unknown tensor " + name);
    dst.values[static_cast<std::size_t>(id)] = t;
  }
}

}  // namespace

TrainResult train(MaskableModel& model, const TrainConfig& cfg,
                  const Dataset& train_set, const Dataset& test_set,
                  const std::string& run_dir) {
  const std::string problem = cfg.validate();
  if (!problem.empty()) throw std::invalid_argument(problem);
  const auto t_start = std::chrono::steady_clock::now();

  Rng init_rng(cfg.seed, "model-init", 0);
  model.init_params(init_rng);

  Rng split_rng(cfg.seed, "split", 0);
  SplitIndices split =
      split_indices(train_set.size(), cfg.val_fraction, split_rng);
  const Dataset val_set =
      split.val.empty() ? Dataset{} : subset_of(train_set, split.val);

  const int n_train = static_cast<int>(split.train.size());
  const long long steps_per_epoch =
      std::max<long long>(1, n_train / cfg.batch_size);
  const long long total_steps = steps_per_epoch * cfg.epochs;

  Trainer tr(model, cfg, total_steps);
  TrainResult result;
  const std::string metrics_path =
      run_dir.empty() ? "" : (fs::path(run_dir) / "metrics.txt").string();
  const std::string last_path =
      run_dir.empty() ? "" : (fs::path(run_dir) / "last.ckpt").string();
  const std::string best_path =
      run_dir.empty() ? "" : (fs::path(run_dir) / "best.ckpt").string();
  if (!run_dir.empty()) fs::create_directories(run_dir);

  // resume from an interrupted run when its checkpoint is present
  if (!last_path.empty() && fs::exists(last_path)) {
    Checkpoint cp = load_checkpoint(last_path);
    restore_tensors(cp.params, model.params(), "params");
    restore_tensors(cp.norm_state, model.norm_state(), "norm_state");
    for (const auto& [name, t] : cp.optimizer) {
      const int id = model.params().find(name);
      if (id < 0)
        throw std::runtime_error("checkpoint optimizer has unknown tensor " +
                                 name);
      tr.velocity().grads[static_cast<std::size_t>(id)] = t;
    }
    if (!cp.controller_text.empty() && tr.controller() != nullptr) {
      tr.controller()->state_from_text(cp.controller_text);
      tr.set_controller_updates(tr.controller()->update_count());
    }
    tr.set_step(cp.step);
  }

  std::size_t flushed = 0;
  auto flush_metrics = [&]() {
    if (metrics_path.empty() || flushed == result.metrics.size()) return;
    append_metrics(metrics_path,
                   {result.metrics.begin() +
                        static_cast<std::ptrdiff_t>(flushed),
                    result.metrics.end()});
    flushed = result.metrics.size();
  };
  auto push = [&](long long step, const std::string& split_name,
                  const std::string& metric, double value) {
    result.metrics.push_back(
        {cfg.run_id, step, split_name, metric, "-", 0, value});
  };

  const Augmentation augment = make_augmentation(cfg.augmentation);

  Tensor x;
  std::vector<int> order, batch_idx, labels;
  long long order_epoch = -1;
  while (tr.step() < total_steps) {
    const long long t = tr.step();
    const long long epoch = t / steps_per_epoch;
    const long long pos = t % steps_per_epoch;
    if (epoch != order_epoch) {
      order = split.train;
      Rng order_rng(cfg.seed, "epoch-order", static_cast<std::uint64_t>(epoch));
      order_rng.shuffle(order);
      order_epoch = epoch;
    }
    batch_idx.assign(
        order.begin() + static_cast<std::ptrdiff_t>(pos * cfg.batch_size),
        order.begin() +
            static_cast<std::ptrdiff_t>((pos + 1) * cfg.batch_size));
    x = train_set.gather(batch_idx);
    labels = train_set.gather_labels(batch_idx);
    if (augment) {
      Rng arng(cfg.seed, "augment", static_cast<std::uint64_t>(t));
      augment(x, arng);
    }
    const LossParts parts = tr.train_step(x, labels);
    const long long done = tr.step();
    if (done % cfg.log_every == 0 || done == total_steps) {
      push(done, "train", "loss_total", parts.total);
      push(done, "train", "loss_ce", parts.ce);
      push(done, "train", "loss_kl", parts.kl);
    }
    if (pos == steps_per_epoch - 1) {  // epoch boundary
      const double test_err = evaluate_error(model, test_set);
      push(done, "test", "clean_error", test_err);
      double val_err = test_err;
      if (val_set.size() > 0) {
        val_err = evaluate_error(model, val_set);
        push(done, "val", "clean_error", val_err);
      }
      if (!run_dir.empty()) {
        const Checkpoint cp = make_checkpoint(model, tr, cfg, done);
        save_checkpoint(cp, last_path);
        if (val_err < result.best_val_error) save_checkpoint(cp, best_path);
      }
      if (val_err < result.best_val_error) result.best_val_error = val_err;
      flush_metrics();
    }
  }

  result.final_clean_error = evaluate_error(model, test_set);
  if (total_steps == 0)
    push(0, "test", "clean_error", result.final_clean_error);
  result.controller_updates = tr.controller_updates();
  result.wallclock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  push(tr.step(), "test", "wallclock_s", result.wallclock_s);
  if (!run_dir.empty()) {
    if (total_steps == 0)
      save_checkpoint(make_checkpoint(model, tr, cfg, 0), last_path);
    result.last_checkpoint = last_path;
    if (fs::exists(best_path)) result.best_checkpoint = best_path;
  }
  flush_metrics();
  return result;
}

}  // namespace ews
