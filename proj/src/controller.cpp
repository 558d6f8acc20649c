#include "ews/controller.hpp"

#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace ews {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// One subset decision: choose k of n indices, emitted ascending.
struct Decision {
  bool path_head = false;  // which output head scores the choices
  int n = 0;
  int k = 0;
  const std::vector<int>* picks = nullptr;  // when replaying a given spec
  std::vector<int>* out = nullptr;          // when sampling
};

}  // namespace

struct Controller::StepCache {
  int token = 0;  // input token id
  std::vector<double> h_prev, c_prev;
  std::vector<double> i, f, g, o, c_new, tanh_c, h_new;
  bool path_head = false;
  int lo = 0, hi = 0;       // inclusive index window scored this step
  std::vector<double> p;    // softmax over [lo, hi]
  int chosen = 0;
};

Controller::Controller(const ModelTopology& topo, const ControllerConfig& cfg)
    : topo_(topo), cfg_(cfg) {
  if (cfg.hidden < 1) throw std::invalid_argument("controller hidden < 1");
  for (const auto& b : topo.blocks)
    max_paths_ = std::max(max_paths_, b.n_paths());
  n_tokens_ = 1 + max_paths_ + cfg_.groups;  // start token + one per pick
  const std::size_t H = static_cast<std::size_t>(cfg_.hidden);
  off_embed_ = 0;
  off_wx_ = off_embed_ + static_cast<std::size_t>(n_tokens_) * H;
  off_wh_ = off_wx_ + 4 * H * H;
  off_b_ = off_wh_ + 4 * H * H;
  off_wp_ = off_b_ + 4 * H;
  off_bp_ = off_wp_ + static_cast<std::size_t>(max_paths_) * H;
  off_wg_ = off_bp_ + static_cast<std::size_t>(max_paths_);
  off_bg_ = off_wg_ + static_cast<std::size_t>(cfg_.groups) * H;
  theta_.assign(off_bg_ + static_cast<std::size_t>(cfg_.groups), 0.0);
  adam_m_.assign(theta_.size(), 0.0);
  adam_v_.assign(theta_.size(), 0.0);
}

void Controller::init_params(Rng& rng) {
  const std::size_t H = static_cast<std::size_t>(cfg_.hidden);
  for (double& v : theta_) v = rng.uniform(-cfg_.init_scale, cfg_.init_scale);
  // biases start at zero
  for (std::size_t j = 0; j < 4 * H; ++j) theta_[off_b_ + j] = 0.0;
  for (int j = 0; j < max_paths_; ++j)
    theta_[off_bp_ + static_cast<std::size_t>(j)] = 0.0;
  for (int j = 0; j < cfg_.groups; ++j)
    theta_[off_bg_ + static_cast<std::size_t>(j)] = 0.0;
  std::fill(adam_m_.begin(), adam_m_.end(), 0.0);
  std::fill(adam_v_.begin(), adam_v_.end(), 0.0);
  adam_t_ = 0;
  baseline_ = 0.0;
  baseline_init_ = false;
}

double Controller::run(SubnetSpec& spec, Rng* rng,
                       std::vector<StepCache>* caches) const {
  const int H = cfg_.hidden;
  const int G = cfg_.groups;
  const double* th = theta_.data();

  if (rng != nullptr) {
    spec = SubnetSpec{};
    spec.rho = cfg_.rho;
    spec.groups = G;
    spec.path_choices.assign(
        static_cast<std::size_t>(topo_.n_blocks()), {});
  }

  std::vector<double> h(static_cast<std::size_t>(H), 0.0);
  std::vector<double> c(static_cast<std::size_t>(H), 0.0);
  std::vector<double> pre(static_cast<std::size_t>(4 * H));
  int token = 0;  // start token
  double logp = 0.0;

  auto decide = [&](bool path_head, int n, int k,
                    const std::vector<int>* given, std::vector<int>* out) {
    int prev = -1;
    for (int t = 0; t < k; ++t) {
      // LSTM step
      const double* ex = th + off_embed_ +
                         static_cast<std::size_t>(token) *
                             static_cast<std::size_t>(H);
      for (int r = 0; r < 4 * H; ++r) {
        const double* wx = th + off_wx_ +
                           static_cast<std::size_t>(r) *
                               static_cast<std::size_t>(H);
        const double* wh = th + off_wh_ +
                           static_cast<std::size_t>(r) *
                               static_cast<std::size_t>(H);
        double s = th[off_b_ + static_cast<std::size_t>(r)];
        for (int j = 0; j < H; ++j)
          s += wx[j] * ex[j] + wh[j] * h[static_cast<std::size_t>(j)];
        pre[static_cast<std::size_t>(r)] = s;
      }
      StepCache sc;
      if (caches != nullptr) {
        sc.token = token;
        sc.h_prev = h;
        sc.c_prev = c;
        sc.i.resize(static_cast<std::size_t>(H));
        sc.f.resize(static_cast<std::size_t>(H));
        sc.g.resize(static_cast<std::size_t>(H));
        sc.o.resize(static_cast<std::size_t>(H));
        sc.tanh_c.resize(static_cast<std::size_t>(H));
      }
      for (int j = 0; j < H; ++j) {
        const double gi = sigmoid(pre[static_cast<std::size_t>(j)]);
        const double gf = sigmoid(pre[static_cast<std::size_t>(H + j)]);
        const double gg = std::tanh(pre[static_cast<std::size_t>(2 * H + j)]);
        const double go = sigmoid(pre[static_cast<std::size_t>(3 * H + j)]);
        const double cj = gf * c[static_cast<std::size_t>(j)] + gi * gg;
        const double tc = std::tanh(cj);
        c[static_cast<std::size_t>(j)] = cj;
        h[static_cast<std::size_t>(j)] = go * tc;
        if (caches != nullptr) {
          sc.i[static_cast<std::size_t>(j)] = gi;
          sc.f[static_cast<std::size_t>(j)] = gf;
          sc.g[static_cast<std::size_t>(j)] = gg;
          sc.o[static_cast<std::size_t>(j)] = go;
          sc.tanh_c[static_cast<std::size_t>(j)] = tc;
        }
      }

      // score the indices that can still complete an ascending pick
      const int lo = prev + 1;
      const int hi = n - k + t;  // inclusive
      const std::size_t off_w = path_head ? off_wp_ : off_wg_;
      const std::size_t off_bias = path_head ? off_bp_ : off_bg_;
      std::vector<double> p(static_cast<std::size_t>(hi - lo + 1));
      double mx = -1e300;
      for (int a = lo; a <= hi; ++a) {
        const double* w = th + off_w +
                          static_cast<std::size_t>(a) *
                              static_cast<std::size_t>(H);
        double s = th[off_bias + static_cast<std::size_t>(a)];
        for (int j = 0; j < H; ++j) s += w[j] * h[static_cast<std::size_t>(j)];
        p[static_cast<std::size_t>(a - lo)] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (double& v : p) {
        v = std::exp(v - mx);
        z += v;
      }
      for (double& v : p) v /= z;

      int chosen;
      if (given != nullptr) {
        chosen = (*given)[static_cast<std::size_t>(t)];
        if (chosen < lo || chosen > hi)
          throw std::invalid_argument(
              "subnet picks are not a valid ascending selection");
      } else {
        const double u = rng->uniform();
        double acc = 0.0;
        chosen = hi;
        for (int a = lo; a <= hi; ++a) {
          acc += p[static_cast<std::size_t>(a - lo)];
          if (u < acc) {
            chosen = a;
            break;
          }
        }
        out->push_back(chosen);
      }
      logp += std::log(p[static_cast<std::size_t>(chosen - lo)]);

      if (caches != nullptr) {
        sc.path_head = path_head;
        sc.lo = lo;
        sc.hi = hi;
        sc.p = std::move(p);
        sc.chosen = chosen;
        sc.c_new = c;
        sc.h_new = h;
        caches->push_back(std::move(sc));
      }
      prev = chosen;
      token = path_head ? 1 + chosen : 1 + max_paths_ + chosen;
    }
  };

  // paths for every block first
  for (int b = 0; b < topo_.n_blocks(); ++b) {
    const int n = topo_.blocks[static_cast<std::size_t>(b)].n_paths();
    const int k = selection_count(n, cfg_.rho);
    if (rng != nullptr) {
      decide(true, n, k, nullptr,
             &spec.path_choices[static_cast<std::size_t>(b)]);
    } else {
      const auto& given = spec.path_choices[static_cast<std::size_t>(b)];
      if (static_cast<int>(given.size()) != k)
        throw std::invalid_argument("subnet path cardinality mismatch");
      decide(true, n, k, &given, nullptr);
    }
  }
  // then channel groups for every layer on a selected path
  const int kg = selection_count(G, cfg_.rho);
  for (int b = 0; b < topo_.n_blocks(); ++b) {
    for (int p : spec.path_choices[static_cast<std::size_t>(b)]) {
      const PathTopology& path =
          topo_.blocks[static_cast<std::size_t>(b)]
              .paths[static_cast<std::size_t>(p)];
      for (int l = 0; l < static_cast<int>(path.layers.size()); ++l) {
        const LayerKey key{b, p, l};
        if (rng != nullptr) {
          decide(false, G, kg, nullptr, &spec.channel_choices[key]);
        } else {
          auto it = spec.channel_choices.find(key);
          if (it == spec.channel_choices.end() ||
              static_cast<int>(it->second.size()) != kg)
            throw std::invalid_argument(
                "subnet channel choices missing or mis-sized");
          decide(false, G, kg, &it->second, nullptr);
        }
      }
    }
  }
  return logp;
}

SubnetSpec Controller::sample(Rng& rng, double* out_log_prob) const {
  SubnetSpec spec;
  const double lp = run(spec, &rng, nullptr);
  if (out_log_prob != nullptr) *out_log_prob = lp;
  return spec;
}

double Controller::log_prob(const SubnetSpec& spec) const {
  SubnetSpec copy = spec;
  return run(copy, nullptr, nullptr);
}

void Controller::backward(const std::vector<StepCache>& caches,
                          std::vector<double>& grad) const {
  const int H = cfg_.hidden;
  const double* th = theta_.data();
  std::vector<double> dh(static_cast<std::size_t>(H), 0.0);
  std::vector<double> dc(static_cast<std::size_t>(H), 0.0);
  std::vector<double> dpre(static_cast<std::size_t>(4 * H));
  for (std::size_t s = caches.size(); s-- > 0;) {
    const StepCache& sc = caches[s];
    // head: d log p(chosen) / d logits = onehot - p over the window
    const std::size_t off_w = sc.path_head ? off_wp_ : off_wg_;
    const std::size_t off_bias = sc.path_head ? off_bp_ : off_bg_;
    for (int a = sc.lo; a <= sc.hi; ++a) {
      const double dl = (a == sc.chosen ? 1.0 : 0.0) -
                        sc.p[static_cast<std::size_t>(a - sc.lo)];
      grad[off_bias + static_cast<std::size_t>(a)] += dl;
      const double* w = th + off_w +
                        static_cast<std::size_t>(a) *
                            static_cast<std::size_t>(H);
      double* dw = grad.data() + off_w +
                   static_cast<std::size_t>(a) * static_cast<std::size_t>(H);
      for (int j = 0; j < H; ++j) {
        dw[j] += dl * sc.h_new[static_cast<std::size_t>(j)];
        dh[static_cast<std::size_t>(j)] += dl * w[j];
      }
    }
    // LSTM cell backward
    for (int j = 0; j < H; ++j) {
      const double tc = sc.tanh_c[static_cast<std::size_t>(j)];
      const double go = sc.o[static_cast<std::size_t>(j)];
      const double dout = dh[static_cast<std::size_t>(j)];
      const double dgo = dout * tc;
      const double dcj = dc[static_cast<std::size_t>(j)] +
                         dout * go * (1.0 - tc * tc);
      const double gi = sc.i[static_cast<std::size_t>(j)];
      const double gf = sc.f[static_cast<std::size_t>(j)];
      const double gg = sc.g[static_cast<std::size_t>(j)];
      dpre[static_cast<std::size_t>(j)] = dcj * gg * gi * (1.0 - gi);
      dpre[static_cast<std::size_t>(H + j)] =
          dcj * sc.c_prev[static_cast<std::size_t>(j)] * gf * (1.0 - gf);
      dpre[static_cast<std::size_t>(2 * H + j)] = dcj * gi * (1.0 - gg * gg);
      dpre[static_cast<std::size_t>(3 * H + j)] = dgo * go * (1.0 - go);
      dc[static_cast<std::size_t>(j)] = dcj * gf;
    }
    const double* ex = th + off_embed_ +
                       static_cast<std::size_t>(sc.token) *
                           static_cast<std::size_t>(H);
    double* dex = grad.data() + off_embed_ +
                  static_cast<std::size_t>(sc.token) *
                      static_cast<std::size_t>(H);
    std::fill(dh.begin(), dh.end(), 0.0);
    for (int r = 0; r < 4 * H; ++r) {
      const double d = dpre[static_cast<std::size_t>(r)];
      grad[off_b_ + static_cast<std::size_t>(r)] += d;
      const double* wx = th + off_wx_ +
                         static_cast<std::size_t>(r) *
                             static_cast<std::size_t>(H);
      const double* wh = th + off_wh_ +
                         static_cast<std::size_t>(r) *
                             static_cast<std::size_t>(H);
      double* dwx = grad.data() + off_wx_ +
                    static_cast<std::size_t>(r) * static_cast<std::size_t>(H);
      double* dwh = grad.data() + off_wh_ +
                    static_cast<std::size_t>(r) * static_cast<std::size_t>(H);
      for (int j = 0; j < H; ++j) {
        dwx[j] += d * ex[j];
        dwh[j] += d * sc.h_prev[static_cast<std::size_t>(j)];
        dex[j] += d * wx[j];
        dh[static_cast<std::size_t>(j)] += d * wh[j];
      }
    }
  }
}

double Controller::grad_log_prob(const SubnetSpec& spec,
                                 std::vector<double>& grad) const {
  grad.assign(theta_.size(), 0.0);
  SubnetSpec copy = spec;
  std::vector<StepCache> caches;
  const double lp = run(copy, nullptr, &caches);
  backward(caches, grad);
  return lp;
}

double Controller::reinforce_update(const std::vector<SubnetSpec>& specs,
                                    const std::vector<double>& rewards) {
  if (specs.empty() || specs.size() != rewards.size())
    throw std::invalid_argument("reinforce_update: bad batch");
  double mean_r = 0.0;
  for (double r : rewards) mean_r += r;
  mean_r /= static_cast<double>(rewards.size());
  const double b = baseline_init_ ? baseline_ : mean_r;

  std::vector<double> acc(theta_.size(), 0.0);
  std::vector<double> g;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    grad_log_prob(specs[i], g);
    const double adv = (rewards[i] - b) / static_cast<double>(specs.size());
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += adv * g[j];
  }

  // Adam ascent on the expected reward
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++adam_t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_t_));
  for (std::size_t j = 0; j < theta_.size(); ++j) {
    adam_m_[j] = b1 * adam_m_[j] + (1.0 - b1) * acc[j];
    adam_v_[j] = b2 * adam_v_[j] + (1.0 - b2) * acc[j] * acc[j];
    theta_[j] += cfg_.lr * (adam_m_[j] / c1) /
                 (std::sqrt(adam_v_[j] / c2) + eps);
  }

  if (baseline_init_)
    baseline_ = cfg_.baseline_decay * baseline_ +
                (1.0 - cfg_.baseline_decay) * mean_r;
  else
    baseline_ = mean_r;
  baseline_init_ = true;
  return b;
}

std::string Controller::state_to_text() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "controller v1\n";
  os << "hidden " << cfg_.hidden << "\n";
  os << "groups " << cfg_.groups << "\n";
  os << "rho " << cfg_.rho << "\n";
  os << "max_paths " << max_paths_ << "\n";
  os << "adam_t " << adam_t_ << "\n";
  os << "baseline " << baseline_ << " " << (baseline_init_ ? 1 : 0) << "\n";
  os << "theta " << theta_.size() << "\n";
  for (double v : theta_) os << v << "\n";
  os << "adam_m\n";
  for (double v : adam_m_) os << v << "\n";
  os << "adam_v\n";
  for (double v : adam_v_) os << v << "\n";
  return os.str();
}

void Controller::state_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string word, version;
  is >> word >> version;
  if (word != "controller" || version != "v1")
    throw std::runtime_error("not a controller state record");
  int hidden = 0, groups = 0, max_paths = 0, binit = 0;
  double rho = 0.0;
  std::size_t n = 0;
  is >> word >> hidden >> word >> groups >> word >> rho >> word >> max_paths;
  is >> word >> adam_t_ >> word >> baseline_ >> binit >> word >> n;
  if (hidden != cfg_.hidden || groups != cfg_.groups ||
      max_paths != max_paths_ || n != theta_.size())
    throw std::runtime_error("controller state shape mismatch");
  baseline_init_ = binit != 0;
  for (double& v : theta_) is >> v;
  is >> word;
  for (double& v : adam_m_) is >> v;
  is >> word;
  for (double& v : adam_v_) is >> v;
  if (!is) throw std::runtime_error("truncated controller state record");
}

}  // namespace ews
