#include "waferscope/network.hpp"

#include <algorithm>
#include <cmath>

#include "waferscope/error.hpp"
#include "waferscope/rng.hpp"

namespace waferscope {

void SscnConfig::validate() const {
  if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
  if (static_cast<int>(block_channels.size()) != num_blocks) {
    throw ConfigError("block_channels has " + std::to_string(block_channels.size()) + " entries, num_blocks is " +
                      std::to_string(num_blocks));
  }
  for (int c : block_channels)
    if (c < 1) throw ConfigError("block channel widths must be >= 1");
  if (!kernel_sizes.empty() && static_cast<int>(kernel_sizes.size()) != num_blocks) {
    throw ConfigError("kernel_sizes must be empty or have num_blocks entries");
  }
  for (int b = 0; b < num_blocks; ++b) {
    const int k = kernel_for(b);
    if (k < 1 || k % 2 == 0) throw ConfigError("kernel sizes must be odd, got " + std::to_string(k));
  }
  if (input_channels < 1) throw ConfigError("input_channels must be >= 1");
  if (latent_dim < 1) throw ConfigError("latent_dim must be > 0");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (grid_size < 1) throw ConfigError("grid_size must be >= 1");
  if (num_blocks >= 31 || (1LL << num_blocks) > grid_size) {
    throw ConfigError("downsampling factor 2^" + std::to_string(num_blocks) + " exceeds grid size " +
                      std::to_string(grid_size));
  }
  if (!(bn_eps > 0.0)) throw ConfigError("bn_eps must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw ConfigError("bn_momentum must be in (0,1)");
}

int SscnConfig::kernel_for(int block) const {
  return kernel_sizes.empty() ? kernel_size : kernel_sizes[static_cast<std::size_t>(block)];
}

int SscnConfig::residual_extent() const {
  long long g = grid_size;
  for (int b = 0; b < num_blocks; ++b) g = pooled_grid(static_cast<int>(g));
  return static_cast<int>(g);
}

SscnConfig SscnConfig::full_scale(int num_classes) {
  SscnConfig c;
  c.num_blocks = 13;
  c.block_channels = {8, 8, 16, 16, 16, 32, 32, 32, 32, 64, 64, 64, 64};
  c.latent_dim = 128;
  c.num_classes = num_classes;
  c.grid_size = 20000;
  return c;
}

std::size_t Sscn::parameter_count() const {
  std::size_t n = latent_conv.parameter_count() + fc.parameter_count();
  for (const auto& c : convs) n += c.parameter_count();
  for (const auto& b : norms) n += b.parameter_count();
  return n;
}

void Sscn::set_mode(NormMode mode) {
  for (auto& b : norms) b.mode = mode;
}

namespace {

void he_fill(std::vector<double>& w, std::size_t fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (double& x : w) x = rng.normal(0.0, sd);
}

DenseLayer make_dense(int in, int out) {
  DenseLayer d;
  d.in_features = in;
  d.out_features = out;
  d.weights.assign(static_cast<std::size_t>(in) * out, 0.0);
  d.bias.assign(static_cast<std::size_t>(out), 0.0);
  return d;
}

}  // namespace

Sscn build_network(const SscnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Sscn m;
  m.config = cfg;
  m.config.seed = seed;
  Rng rng(seed);
  int cin = cfg.input_channels;
  for (int b = 0; b < cfg.num_blocks; ++b) {
    const int k = cfg.kernel_for(b);
    const int cout = cfg.block_channels[static_cast<std::size_t>(b)];
    SscLayer conv = SscLayer::zeros(k, cin, cout);
    he_fill(conv.weights, static_cast<std::size_t>(k) * k * cin, rng);
    m.convs.push_back(std::move(conv));
    BatchNorm bn(cout);
    bn.eps = cfg.bn_eps;
    bn.momentum = cfg.bn_momentum;
    m.norms.push_back(std::move(bn));
    cin = cout;
  }
  const int extent = cfg.residual_extent();
  const int latent_in = extent * extent * cin;
  m.latent_conv = make_dense(latent_in, cfg.latent_dim);
  he_fill(m.latent_conv.weights, static_cast<std::size_t>(latent_in), rng);
  m.fc = make_dense(cfg.latent_dim, cfg.num_classes);
  he_fill(m.fc.weights, static_cast<std::size_t>(cfg.latent_dim), rng);
  return m;
}

namespace {

struct BlockTape {
  std::vector<SscCache> ssc;
  BatchNormCache bn;
  std::vector<ReluCache> relu;
  std::vector<PoolCache> pool;
};

struct Tape {
  std::vector<BlockTape> blocks;
  std::vector<SparseTensor> residual;  // inputs of the latent convolution
  std::vector<ForwardOutput> outputs;
};

void record(ForwardTrace* trace, const char* name, int b, const SparseTensor& t) {
  if (!trace) return;
  trace->stages.push_back({std::string(name) + std::to_string(b), t.grid_size(), t.support_ptr()});
}

std::size_t residual_cell(Coord c, int extent) {
  return static_cast<std::size_t>(c.i) * static_cast<std::size_t>(extent) + static_cast<std::size_t>(c.j);
}

Tape run_forward(const Sscn& m, std::span<const SparseTensor> batch, NormMode mode, bool keep, ForwardTrace* trace) {
  const SscnConfig& cfg = m.config;
  for (const auto& x : batch) {
    if (x.grid_size() != cfg.grid_size) {
      throw ContractError("forward: input grid " + std::to_string(x.grid_size()) + " != model grid " +
                          std::to_string(cfg.grid_size));
    }
    if (x.channels() != cfg.input_channels) throw ContractError("forward: input channel mismatch");
  }
  Tape tape;
  std::vector<SparseTensor> cur(batch.begin(), batch.end());
  int grid = cfg.grid_size;
  for (int b = 0; b < cfg.num_blocks; ++b) {
    BlockTape bt;
    const SscLayer& conv = m.convs[static_cast<std::size_t>(b)];
    std::vector<SparseTensor> h;
    h.reserve(cur.size());
    for (const auto& x : cur) {
      auto rb = build_submanifold_rulebook(x.support_ptr(), conv.kernel_size, grid);
      auto [y, cache] = ssc_forward(conv, x, rb);
      if (trace) record(trace, "ssc", b, y);
      h.push_back(std::move(y));
      if (keep) bt.ssc.push_back(std::move(cache));
    }
    BatchNorm bn = m.norms[static_cast<std::size_t>(b)];
    bn.mode = mode;
    auto [normed, bn_cache] = batchnorm_forward(bn, h);
    if (trace)
      for (const auto& t : normed) record(trace, "bn", b, t);
    bt.bn = std::move(bn_cache);
    std::vector<SparseTensor> next;
    next.reserve(cur.size());
    for (const auto& t : normed) {
      auto [r, rc] = relu_forward(t);
      if (trace) record(trace, "relu", b, r);
      auto prb = build_pool_rulebook(r.support_ptr(), grid);
      auto [p, pc] = maxpool2_forward(r, prb);
      if (trace) record(trace, "pool", b, p);
      if (keep) {
        bt.relu.push_back(std::move(rc));
        bt.pool.push_back(std::move(pc));
      }
      next.push_back(std::move(p));
    }
    if (!keep) bt.bn.normalized.clear();
    tape.blocks.push_back(std::move(bt));
    cur = std::move(next);
    grid = pooled_grid(grid);
  }

  const int extent = grid;
  const int C = cfg.block_channels.back();
  const int L = cfg.latent_dim;
  const int K = cfg.num_classes;
  tape.outputs.reserve(cur.size());
  for (const auto& x : cur) {
    ForwardOutput out;
    out.latent = m.latent_conv.bias;
    const auto f = x.features();
    for (std::size_t r = 0; r < x.num_sites(); ++r) {
      const std::size_t cell = residual_cell(x.support()[r], extent);
      for (int c = 0; c < C; ++c) {
        const double xv = f[r * C + c];
        if (xv == 0.0) continue;
        const double* w = m.latent_conv.weights.data() + (cell * C + c) * L;
        for (int o = 0; o < L; ++o) out.latent[o] += w[o] * xv;
      }
    }
    out.scores = m.fc.bias;
    for (int o = 0; o < L; ++o) {
      const double* w = m.fc.weights.data() + static_cast<std::size_t>(o) * K;
      for (int k = 0; k < K; ++k) out.scores[k] += w[k] * out.latent[o];
    }
    tape.outputs.push_back(std::move(out));
  }
  if (keep) tape.residual = std::move(cur);
  return tape;
}

}  // namespace

ForwardOutput forward(const Sscn& model, const SparseTensor& w, NormMode mode, ForwardTrace* trace) {
  Tape t = run_forward(model, std::span<const SparseTensor>(&w, 1), mode, false, trace);
  return std::move(t.outputs.front());
}

std::vector<ForwardOutput> forward_batch(const Sscn& model, std::span<const SparseTensor> batch, NormMode mode) {
  if (mode == NormMode::Eval) {
    std::vector<ForwardOutput> out;
    out.reserve(batch.size());
    for (const auto& x : batch) out.push_back(forward(model, x, mode));
    return out;
  }
  return run_forward(model, batch, mode, false, nullptr).outputs;
}

void for_each_parameter(Sscn& m, const std::function<void(const std::string&, std::span<double>)>& fn) {
  for (std::size_t b = 0; b < m.convs.size(); ++b) {
    const std::string p = "block" + std::to_string(b);
    fn(p + ".ssc.weight", m.convs[b].weights);
    fn(p + ".ssc.bias", m.convs[b].bias);
    fn(p + ".bn.gamma", m.norms[b].gamma);
    fn(p + ".bn.beta", m.norms[b].beta);
  }
  fn("latent_conv.weight", m.latent_conv.weights);
  fn("latent_conv.bias", m.latent_conv.bias);
  fn("fc.weight", m.fc.weights);
  fn("fc.bias", m.fc.bias);
}

void for_each_parameter(const Sscn& m, const std::function<void(const std::string&, std::span<const double>)>& fn) {
  for_each_parameter(const_cast<Sscn&>(m), [&](const std::string& name, std::span<double> v) {
    fn(name, std::span<const double>(v.data(), v.size()));
  });
}

std::vector<ParameterGroup> parameter_layout(const Sscn& model) {
  std::vector<ParameterGroup> groups;
  std::size_t offset = 0;
  for_each_parameter(model, [&](const std::string& name, std::span<const double> v) {
    groups.push_back({name, offset, v.size()});
    offset += v.size();
  });
  return groups;
}

std::vector<double> flatten_parameters(const Sscn& model) {
  std::vector<double> flat;
  flat.reserve(model.parameter_count());
  for_each_parameter(model, [&](const std::string&, std::span<const double> v) { flat.insert(flat.end(), v.begin(), v.end()); });
  return flat;
}

void assign_parameters(Sscn& model, std::span<const double> flat) {
  if (flat.size() != model.parameter_count()) throw ContractError("assign_parameters: size mismatch");
  std::size_t offset = 0;
  for_each_parameter(model, [&](const std::string&, std::span<double> v) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset), flat.begin() + static_cast<std::ptrdiff_t>(offset + v.size()),
              v.begin());
    offset += v.size();
  });
}

LossAndGrads loss_and_grads(const Sscn& m, std::span<const SparseTensor> inputs, std::span<const int> labels,
                            NormMode mode) {
  if (inputs.empty()) throw ContractError("loss_and_grads: empty batch");
  if (inputs.size() != labels.size()) throw ContractError("loss_and_grads: inputs/labels size mismatch");
  const SscnConfig& cfg = m.config;
  for (int l : labels) {
    if (l < 0 || l >= cfg.num_classes) throw ContractError("loss_and_grads: label " + std::to_string(l) + " out of range");
  }
  Tape tape = run_forward(m, inputs, mode, true, nullptr);
  const std::size_t B = inputs.size();
  const int L = cfg.latent_dim;
  const int K = cfg.num_classes;
  const int C = cfg.block_channels.back();
  const int extent = cfg.residual_extent();

  // Gradient buffers shaped like the model.
  std::vector<std::vector<double>> g_conv_w(m.convs.size()), g_conv_b(m.convs.size());
  std::vector<std::vector<double>> g_gamma(m.norms.size()), g_beta(m.norms.size());
  std::vector<double> g_lw(m.latent_conv.weights.size(), 0.0), g_lb(m.latent_conv.bias.size(), 0.0);
  std::vector<double> g_fw(m.fc.weights.size(), 0.0), g_fb(m.fc.bias.size(), 0.0);

  LossAndGrads result;
  std::vector<SparseTensor> grad_cur;
  grad_cur.reserve(B);
  for (std::size_t s = 0; s < B; ++s) {
    const ForwardOutput& out = tape.outputs[s];
    const auto p = softmax(out.scores);
    const int y = labels[s];
    result.loss += -std::log(std::max(p[static_cast<std::size_t>(y)], 1e-300));
    if (std::max_element(out.scores.begin(), out.scores.end()) - out.scores.begin() == y) ++result.correct;

    std::vector<double> dscore(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) dscore[k] = (p[k] - (k == y ? 1.0 : 0.0)) / static_cast<double>(B);
    std::vector<double> dlatent(static_cast<std::size_t>(L), 0.0);
    for (int o = 0; o < L; ++o) {
      const double* w = m.fc.weights.data() + static_cast<std::size_t>(o) * K;
      double* gw = g_fw.data() + static_cast<std::size_t>(o) * K;
      for (int k = 0; k < K; ++k) {
        gw[k] += out.latent[o] * dscore[k];
        dlatent[o] += w[k] * dscore[k];
      }
    }
    for (int k = 0; k < K; ++k) g_fb[k] += dscore[k];
    for (int o = 0; o < L; ++o) g_lb[o] += dlatent[o];

    const SparseTensor& x = tape.residual[s];
    const auto f = x.features();
    std::vector<double> gx(f.size(), 0.0);
    for (std::size_t r = 0; r < x.num_sites(); ++r) {
      const std::size_t cell = residual_cell(x.support()[r], extent);
      for (int c = 0; c < C; ++c) {
        const std::size_t base = (cell * C + c) * L;
        const double xv = f[r * C + c];
        double acc = 0.0;
        for (int o = 0; o < L; ++o) {
          g_lw[base + o] += xv * dlatent[o];
          acc += m.latent_conv.weights[base + o] * dlatent[o];
        }
        gx[r * C + c] = acc;
      }
    }
    grad_cur.push_back(x.with_features(C, std::move(gx)));
  }
  result.loss /= static_cast<double>(B);

  for (int b = cfg.num_blocks - 1; b >= 0; --b) {
    const BlockTape& bt = tape.blocks[static_cast<std::size_t>(b)];
    std::vector<SparseTensor> g_bn_out;
    g_bn_out.reserve(B);
    for (std::size_t s = 0; s < B; ++s) {
      SparseTensor g_relu_out = maxpool2_backward(bt.pool[s], grad_cur[s]);
      g_bn_out.push_back(relu_backward(bt.relu[s], g_relu_out));
    }
    BatchNorm bn = m.norms[static_cast<std::size_t>(b)];
    bn.mode = mode;
    BatchNormGradients bg = batchnorm_backward(bn, bt.bn, g_bn_out);
    g_gamma[static_cast<std::size_t>(b)] = std::move(bg.grad_gamma);
    g_beta[static_cast<std::size_t>(b)] = std::move(bg.grad_beta);
    const SscLayer& conv = m.convs[static_cast<std::size_t>(b)];
    std::vector<double> gw(conv.weights.size(), 0.0), gb(conv.bias.size(), 0.0);
    std::vector<SparseTensor> next;
    next.reserve(B);
    for (std::size_t s = 0; s < B; ++s) {
      SscGradients sg = ssc_backward(conv, bt.ssc[s], bg.grad_input[s]);
      for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += sg.grad_weights[k];
      for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += sg.grad_bias[k];
      next.push_back(std::move(sg.grad_input));
    }
    g_conv_w[static_cast<std::size_t>(b)] = std::move(gw);
    g_conv_b[static_cast<std::size_t>(b)] = std::move(gb);
    grad_cur = std::move(next);
  }

  result.grads.reserve(m.parameter_count());
  auto append = [&](const std::vector<double>& v) { result.grads.insert(result.grads.end(), v.begin(), v.end()); };
  for (std::size_t b = 0; b < m.convs.size(); ++b) {
    append(g_conv_w[b]);
    append(g_conv_b[b]);
    append(g_gamma[b]);
    append(g_beta[b]);
  }
  append(g_lw);
  append(g_lb);
  append(g_fw);
  append(g_fb);

  result.bn_stats.reserve(tape.blocks.size());
  for (auto& bt : tape.blocks) {
    bt.bn.normalized.clear();
    result.bn_stats.push_back(std::move(bt.bn));
  }
  return result;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in (0,1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in (0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const TrainConfig& cfg) {
  if (grads.size() != params.size()) throw ContractError("adam_step: gradient size mismatch");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: optimizer state size mismatch");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * grads[k];
    state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * grads[k] * grads[k];
    const double mhat = state.m[k] / bc1;
    const double vhat = state.v[k] / bc2;
    params[k] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
  }
}

}  // namespace waferscope
