#include "ews/model.hpp"

#include <cstring>
#include <stdexcept>

#include "kernels.hpp"

namespace ews {

using kernels::ConvShape;

std::vector<int> all_channels(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

int ParamSet::add(const std::string& name, std::vector<int> shape) {
  names.push_back(name);
  values.emplace_back(std::move(shape));
  return static_cast<int>(values.size()) - 1;
}

int ParamSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

std::size_t ParamSet::total_scalars() const {
  std::size_t n = 0;
  for (const Tensor& t : values) n += t.size();
  return n;
}

void GradSet::init_like(const ParamSet& params) {
  grads.clear();
  for (const Tensor& t : params.values) grads.emplace_back(t.shape());
}

void GradSet::zero() {
  for (Tensor& t : grads) t.zero();
}

MaskableModel::MaskableModel(ModelTopology topo, int groups)
    : topo_(std::move(topo)), groups_(groups) {
  std::string err = validate_topology(topo_, groups_);
  if (!err.empty()) throw std::invalid_argument("invalid topology: " + err);

  auto make_unit = [&](const std::string& prefix, LayerKind kind, int in_c,
                       int out_c, int stride, bool relu) {
    Unit u;
    u.kind = kind;
    u.in_c = in_c;
    u.out_c = out_c;
    u.ksize = (kind == LayerKind::kConv3x3) ? 3 : 1;
    u.pad = (kind == LayerKind::kConv3x3) ? 1 : 0;
    u.stride = stride;
    u.relu = relu;
    u.w = params_.add(prefix + ".w", {out_c, in_c, u.ksize, u.ksize});
    u.gamma = params_.add(prefix + ".gamma", {out_c});
    u.beta = params_.add(prefix + ".beta", {out_c});
    u.run_mean = norm_state_.add(prefix + ".rm", {out_c});
    u.run_var = norm_state_.add(prefix + ".rv", {out_c});
    return u;
  };

  stem_ = make_unit("stem", LayerKind::kConv3x3, topo_.input_c,
                    topo_.stem_channels, 1, true);
  for (int b = 0; b < topo_.n_blocks(); ++b) {
    const BlockTopology& bt = topo_.blocks[static_cast<std::size_t>(b)];
    const int in_c = topo_.block_in_channels(b);
    Block blk;
    for (int p = 0; p < bt.n_paths(); ++p) {
      const PathTopology& pt = bt.paths[static_cast<std::size_t>(p)];
      Path path;
      int c = in_c;
      for (std::size_t l = 0; l < pt.layers.size(); ++l) {
        const LayerTopology& lt = pt.layers[l];
        const bool last = (l + 1 == pt.layers.size());
        LayerKind kind = lt.kind == LayerKind::kFullyConnected
                             ? LayerKind::kConv1x1
                             : lt.kind;
        std::string prefix = "b" + std::to_string(b) + ".p" +
                             std::to_string(p) + ".u" + std::to_string(l);
        path.units.push_back(
            make_unit(prefix, kind, c, lt.channels, lt.stride, !last));
        c = lt.channels;
      }
      blk.paths.push_back(std::move(path));
    }
    blocks_.push_back(std::move(blk));
  }
  const int fc = topo_.final_channels();
  head_w_ = params_.add("head.w", {topo_.num_classes, fc});
  head_b_ = params_.add("head.b", {topo_.num_classes});
}

void MaskableModel::init_params(Rng& rng) {
  for (std::size_t i = 0; i < params_.values.size(); ++i) {
    const std::string& name = params_.names[i];
    Tensor& t = params_.values[i];
    if (name.ends_with(".gamma")) {
      t.fill(1.0f);
    } else if (name.ends_with(".beta") || name == "head.b") {
      t.zero();
    } else if (name == "head.w") {
      const float std = std::sqrt(1.0f / static_cast<float>(t.dim(1)));
      for (std::size_t j = 0; j < t.size(); ++j)
        t[j] = std * static_cast<float>(rng.normal());
    } else {  // conv weight, He init
      const int fan_in = t.dim(1) * t.dim(2) * t.dim(3);
      const float std = std::sqrt(2.0f / static_cast<float>(fan_in));
      for (std::size_t j = 0; j < t.size(); ++j)
        t[j] = std * static_cast<float>(rng.normal());
    }
  }
  for (std::size_t i = 0; i < norm_state_.values.size(); ++i)
    norm_state_.values[i].fill(norm_state_.names[i].ends_with(".rv") ? 1.0f
                                                                     : 0.0f);
}

void MaskableModel::run_unit(const Unit& u, const Tensor& in,
                             const std::vector<int>& sel_in,
                             const std::vector<int>& sel_out, Mode mode,
                             UnitTrace& t) const {
  ConvShape cs{u.ksize, u.stride, u.pad};
  const int oh = cs.out_h(in.dim(2)), ow = cs.out_w(in.dim(3));
  t.conv_out.reshape({in.dim(0), u.out_c, oh, ow});
  kernels::conv_forward(in, params_.values[static_cast<std::size_t>(u.w)], cs,
                        sel_in, sel_out, t.conv_out);
  t.out.reshape({in.dim(0), u.out_c, oh, ow});
  const float* gamma = params_.values[static_cast<std::size_t>(u.gamma)].data();
  const float* beta = params_.values[static_cast<std::size_t>(u.beta)].data();
  if (mode == Mode::kTrain) {
    kernels::bn_forward_train(t.conv_out, sel_out, gamma, beta, kBnEps, u.relu,
                              t.out, t.mean, t.invstd);
  } else {
    const Tensor& rm = norm_state_.values[static_cast<std::size_t>(u.run_mean)];
    const Tensor& rv = norm_state_.values[static_cast<std::size_t>(u.run_var)];
    kernels::bn_forward_eval(t.conv_out, sel_out, gamma, beta, rm.data(),
                             rv.data(), kBnEps, u.relu, t.out);
    t.mean.assign(static_cast<std::size_t>(u.out_c), 0.0f);
    t.invstd.assign(static_cast<std::size_t>(u.out_c), 0.0f);
    for (int c : sel_out) {
      t.mean[static_cast<std::size_t>(c)] = rm[static_cast<std::size_t>(c)];
      t.invstd[static_cast<std::size_t>(c)] =
          1.0f / std::sqrt(rv[static_cast<std::size_t>(c)] + kBnEps);
    }
  }
  t.sel_in = sel_in;
  t.sel_out = sel_out;
}

void MaskableModel::forward(const Tensor& batch, const SubnetSpec* subnet,
                            Mode mode, ForwardTrace& trace, float dropout_rate,
                            Rng* dropout_rng) const {
  if (batch.ndim() != 4 || batch.dim(1) != topo_.input_c ||
      batch.dim(2) != topo_.input_h || batch.dim(3) != topo_.input_w)
    throw std::invalid_argument("batch shape " + batch.shape_str() +
                                " does not match topology input");
  if (subnet) {
    auto violations = validate_subnet(*subnet, topo_);
    if (!violations.empty())
      throw std::invalid_argument("invalid subnet: " + violations.front());
  }
  const int n_imgs = batch.dim(0);
  trace.input = &batch;
  trace.mode = mode;
  trace.dropout_rate =
      (mode == Mode::kTrain && dropout_rng) ? dropout_rate : 0.0f;
  trace.blocks.assign(static_cast<std::size_t>(topo_.n_blocks()), {});

  run_unit(stem_, batch, all_channels(topo_.input_c),
           all_channels(topo_.stem_channels), mode, trace.stem);

  const Tensor* cur = &trace.stem.out;
  for (int b = 0; b < topo_.n_blocks(); ++b) {
    const Block& blk = blocks_[static_cast<std::size_t>(b)];
    BlockTrace& bt = trace.blocks[static_cast<std::size_t>(b)];
    const int out_c = topo_.block_in_channels(b + 1);
    const bool down = topo_.blocks[static_cast<std::size_t>(b)].downsamples;
    const int oh = down ? cur->dim(2) / 2 : cur->dim(2);
    const int ow = down ? cur->dim(3) / 2 : cur->dim(3);
    bt.out.reshape({n_imgs, out_c, oh, ow});
    bt.paths.assign(blk.paths.size(), {});
    for (int p = 0; p < static_cast<int>(blk.paths.size()); ++p) {
      PathTrace& ptrace = bt.paths[static_cast<std::size_t>(p)];
      ptrace.selected = subnet ? subnet->path_selected(b, p) : true;
      if (!ptrace.selected) continue;  // zero contribution, zero compute
      const Path& path = blk.paths[static_cast<std::size_t>(p)];
      if (path.units.empty()) {
        axpy(1.0f, *cur, bt.out);  // skip connection
        continue;
      }
      const Tensor* pin = cur;
      std::vector<int> sel_in = all_channels(pin->dim(1));
      ptrace.units.resize(path.units.size());
      for (std::size_t l = 0; l < path.units.size(); ++l) {
        const Unit& u = path.units[l];
        std::vector<int> sel_out =
            subnet ? subnet->selected_channels(
                         {b, p, static_cast<int>(l)}, u.out_c)
                   : all_channels(u.out_c);
        run_unit(u, *pin, sel_in, sel_out, mode, ptrace.units[l]);
        pin = &ptrace.units[l].out;
        sel_in = std::move(sel_out);
      }
      axpy(1.0f, *pin, bt.out);
    }
    // relu over the path sum
    for (std::size_t i = 0; i < bt.out.size(); ++i)
      bt.out[i] = std::max(bt.out[i], 0.0f);
    if (trace.dropout_rate > 0.0f) {
      const float rate = trace.dropout_rate;
      const float scale = rate >= 1.0f ? 0.0f : 1.0f / (1.0f - rate);
      bt.keep.assign(static_cast<std::size_t>(n_imgs) * out_c, 1);
      const std::size_t plane = static_cast<std::size_t>(oh) * ow;
      for (int n = 0; n < n_imgs; ++n)
        for (int c = 0; c < out_c; ++c) {
          const bool keep = dropout_rng->uniform() >= rate;
          bt.keep[static_cast<std::size_t>(n) * out_c + c] = keep ? 1 : 0;
          float* px = &bt.out.at(n, c, 0, 0);
          const float f = keep ? scale : 0.0f;
          for (std::size_t i = 0; i < plane; ++i) px[i] *= f;
        }
    }
    cur = &bt.out;
  }
  kernels::global_avg_pool(*cur, trace.pooled);
  kernels::linear_forward(trace.pooled,
                          params_.values[static_cast<std::size_t>(head_w_)],
                          params_.values[static_cast<std::size_t>(head_b_)],
                          trace.logits);
  for (std::size_t i = 0; i < trace.logits.size(); ++i)
    if (!std::isfinite(trace.logits[i]))
      throw std::runtime_error("non-finite logits in forward pass");
}

Tensor MaskableModel::forward_full(const Tensor& batch, Mode mode) const {
  ForwardTrace trace;
  forward(batch, nullptr, mode, trace);
  return trace.logits;
}

Tensor MaskableModel::forward_masked(const Tensor& batch,
                                     const SubnetSpec& subnet,
                                     Mode mode) const {
  ForwardTrace trace;
  forward(batch, &subnet, mode, trace);
  return trace.logits;
}

void MaskableModel::backward_unit(const Unit& u, const Tensor& in,
                                  const UnitTrace& t, const Tensor& dout,
                                  GradSet& grads, Mode mode,
                                  Tensor* din) const {
  Tensor dconv(t.conv_out.shape());
  kernels::bn_backward(t.conv_out, t.out, dout, t.sel_out,
                       params_.values[static_cast<std::size_t>(u.gamma)].data(),
                       t.mean, t.invstd, u.relu, mode == Mode::kTrain,
                       grads.grads[static_cast<std::size_t>(u.gamma)].data(),
                       grads.grads[static_cast<std::size_t>(u.beta)].data(),
                       &dconv);
  ConvShape cs{u.ksize, u.stride, u.pad};
  kernels::conv_backward(in, params_.values[static_cast<std::size_t>(u.w)], cs,
                         t.sel_in, t.sel_out, dconv,
                         &grads.grads[static_cast<std::size_t>(u.w)], din);
}

void MaskableModel::backward(const ForwardTrace& trace, const Tensor& dlogits,
                             GradSet& grads, Tensor* dinput) const {
  const Tensor& last =
      trace.blocks.empty() ? trace.stem.out : trace.blocks.back().out;
  Tensor dpooled(trace.pooled.shape());
  kernels::linear_backward(trace.pooled,
                           params_.values[static_cast<std::size_t>(head_w_)],
                           dlogits,
                           &grads.grads[static_cast<std::size_t>(head_w_)],
                           &grads.grads[static_cast<std::size_t>(head_b_)],
                           &dpooled);
  Tensor dcur(last.shape());
  kernels::global_avg_pool_backward(dpooled, last.dim(2), last.dim(3), dcur);

  for (int b = topo_.n_blocks() - 1; b >= 0; --b) {
    const Block& blk = blocks_[static_cast<std::size_t>(b)];
    const BlockTrace& bt = trace.blocks[static_cast<std::size_t>(b)];
    const Tensor& bin =
        b == 0 ? trace.stem.out : trace.blocks[static_cast<std::size_t>(b - 1)].out;
    // dropout backward
    Tensor dy = std::move(dcur);
    if (!bt.keep.empty()) {
      const int out_c = bt.out.dim(1);
      const float scale =
          trace.dropout_rate >= 1.0f ? 0.0f : 1.0f / (1.0f - trace.dropout_rate);
      const std::size_t plane =
          static_cast<std::size_t>(bt.out.dim(2)) * bt.out.dim(3);
      for (int n = 0; n < bt.out.dim(0); ++n)
        for (int c = 0; c < out_c; ++c) {
          const float f =
              bt.keep[static_cast<std::size_t>(n) * out_c + c] ? scale : 0.0f;
          float* p = &dy.at(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) p[i] *= f;
        }
    }
    // relu backward over the path sum: out > 0 gates the gradient. With
    // dropout the surviving activations keep their sign, so the same gate
    // applies.
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (bt.out[i] <= 0.0f) dy[i] = 0.0f;

    Tensor dprev(bin.shape());
    for (int p = 0; p < static_cast<int>(blk.paths.size()); ++p) {
      const PathTrace& ptrace = bt.paths[static_cast<std::size_t>(p)];
      if (!ptrace.selected) continue;
      const Path& path = blk.paths[static_cast<std::size_t>(p)];
      if (path.units.empty()) {
        axpy(1.0f, dy, dprev);
        continue;
      }
      const Tensor* dtop = &dy;
      Tensor dbuf[2];
      int flip = 0;
      for (int l = static_cast<int>(path.units.size()) - 1; l >= 0; --l) {
        const Tensor& uin =
            l == 0 ? bin : ptrace.units[static_cast<std::size_t>(l - 1)].out;
        Tensor* din_l;
        if (l == 0) {
          din_l = &dprev;
        } else {
          dbuf[flip].reshape(uin.shape());
          din_l = &dbuf[flip];
        }
        backward_unit(path.units[static_cast<std::size_t>(l)], uin,
                      ptrace.units[static_cast<std::size_t>(l)], *dtop, grads,
                      trace.mode, din_l);
        if (l == 0) break;
        dtop = &dbuf[flip];
        flip ^= 1;
      }
    }
    dcur = std::move(dprev);
  }
  backward_unit(stem_, *trace.input, trace.stem, dcur, grads, trace.mode,
                dinput);
}

void MaskableModel::update_running_stats(const ForwardTrace& trace) {
  auto update = [&](const Unit& u, const UnitTrace& t) {
    Tensor& rm = norm_state_.values[static_cast<std::size_t>(u.run_mean)];
    Tensor& rv = norm_state_.values[static_cast<std::size_t>(u.run_var)];
    for (int c : t.sel_out) {
      const float m = t.mean[static_cast<std::size_t>(c)];
      const float is = t.invstd[static_cast<std::size_t>(c)];
      const float var = 1.0f / (is * is) - kBnEps;
      rm[static_cast<std::size_t>(c)] =
          (1.0f - kBnMomentum) * rm[static_cast<std::size_t>(c)] +
          kBnMomentum * m;
      rv[static_cast<std::size_t>(c)] =
          (1.0f - kBnMomentum) * rv[static_cast<std::size_t>(c)] +
          kBnMomentum * var;
    }
  };
  update(stem_, trace.stem);
  for (int b = 0; b < topo_.n_blocks(); ++b)
    for (std::size_t p = 0; p < blocks_[static_cast<std::size_t>(b)].paths.size();
         ++p) {
      const PathTrace& pt =
          trace.blocks[static_cast<std::size_t>(b)].paths[p];
      if (!pt.selected) continue;
      for (std::size_t l = 0; l < pt.units.size(); ++l)
        update(blocks_[static_cast<std::size_t>(b)].paths[p].units[l],
               pt.units[l]);
    }
}

std::uint64_t MaskableModel::param_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const ParamSet& ps) {
    for (const Tensor& t : ps.values) {
      const unsigned char* bytes =
          reinterpret_cast<const unsigned char*>(t.data());
      for (std::size_t i = 0; i < t.size() * sizeof(float); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    }
  };
  mix(params_);
  mix(norm_state_);
  return h;
}

}  // namespace ews
