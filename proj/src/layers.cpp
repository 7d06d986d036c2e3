#include "waferscope/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "waferscope/error.hpp"

namespace waferscope {
namespace {

void require_support(const SparseTensor& t, const SupportPtr& expected, const char* what) {
  if (!same_support(t.support_ptr(), expected)) {
    throw ContractError(std::string(what) + ": tensor support does not match the rulebook");
  }
}

}  // namespace

SscLayer SscLayer::zeros(int kernel_size, int in_channels, int out_channels) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ContractError("SSC kernel size must be odd");
  SscLayer l;
  l.kernel_size = kernel_size;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.weights.assign(static_cast<std::size_t>(kernel_size) * kernel_size * in_channels * out_channels, 0.0);
  l.bias.assign(static_cast<std::size_t>(out_channels), 0.0);
  return l;
}

std::pair<SparseTensor, SscCache> ssc_forward(const SscLayer& layer, const SparseTensor& x, const RuleBookPtr& rb) {
  if (!rb || rb->mode != RuleMode::Submanifold) throw ContractError("ssc_forward: expected a submanifold rulebook");
  if (rb->kernel_size != layer.kernel_size) {
    throw ContractError("ssc_forward: rulebook kernel " + std::to_string(rb->kernel_size) + " != layer kernel " +
                        std::to_string(layer.kernel_size));
  }
  if (x.channels() != layer.in_channels) {
    throw ContractError("ssc_forward: input has " + std::to_string(x.channels()) + " channels, layer expects " +
                        std::to_string(layer.in_channels));
  }
  require_support(x, rb->input_support, "ssc_forward");

  const int cin = layer.in_channels;
  const int cout = layer.out_channels;
  const std::size_t n = x.num_sites();
  std::vector<double> y(n * cout);
  for (std::size_t r = 0; r < n; ++r) std::copy(layer.bias.begin(), layer.bias.end(), y.begin() + r * cout);

  const double* xf = x.features().data();
  const double* w = layer.weights.data();
  for (const Rule& rule : rb->rules) {
    const double* xi = xf + static_cast<std::size_t>(rule.input) * cin;
    const double* wk = w + static_cast<std::size_t>(rule.offset) * cin * cout;
    double* yo = y.data() + static_cast<std::size_t>(rule.output) * cout;
    for (int c = 0; c < cin; ++c) {
      const double xv = xi[c];
      const double* wr = wk + static_cast<std::size_t>(c) * cout;
      for (int o = 0; o < cout; ++o) yo[o] += wr[o] * xv;
    }
  }
  SparseTensor out = x.with_features(cout, std::move(y));
  return {std::move(out), SscCache{x, rb}};
}

SscGradients ssc_backward(const SscLayer& layer, const SscCache& cache, const SparseTensor& grad_out) {
  const RuleBook& rb = *cache.rulebook;
  require_support(grad_out, rb.output_support, "ssc_backward");
  if (grad_out.channels() != layer.out_channels) throw ContractError("ssc_backward: gradient channel mismatch");

  const int cin = layer.in_channels;
  const int cout = layer.out_channels;
  const std::size_t n = cache.input.num_sites();
  SscGradients g;
  g.grad_weights.assign(layer.weights.size(), 0.0);
  g.grad_bias.assign(layer.bias.size(), 0.0);
  std::vector<double> gx(n * cin, 0.0);

  const double* go = grad_out.features().data();
  for (std::size_t r = 0; r < grad_out.num_sites(); ++r) {
    for (int o = 0; o < cout; ++o) g.grad_bias[o] += go[r * cout + o];
  }
  const double* xf = cache.input.features().data();
  const double* w = layer.weights.data();
  for (const Rule& rule : rb.rules) {
    const double* xi = xf + static_cast<std::size_t>(rule.input) * cin;
    const double* gr = go + static_cast<std::size_t>(rule.output) * cout;
    const std::size_t base = static_cast<std::size_t>(rule.offset) * cin * cout;
    double* gxi = gx.data() + static_cast<std::size_t>(rule.input) * cin;
    for (int c = 0; c < cin; ++c) {
      const double* wr = w + base + static_cast<std::size_t>(c) * cout;
      double* gw = g.grad_weights.data() + base + static_cast<std::size_t>(c) * cout;
      double acc = 0.0;
      for (int o = 0; o < cout; ++o) {
        gw[o] += xi[c] * gr[o];
        acc += wr[o] * gr[o];
      }
      gxi[c] += acc;
    }
  }
  g.grad_input = cache.input.with_features(cin, std::move(gx));
  return g;
}

BatchNorm::BatchNorm(int c)
    : channels(c),
      gamma(static_cast<std::size_t>(c), 1.0),
      beta(static_cast<std::size_t>(c), 0.0),
      running_mean(static_cast<std::size_t>(c), 0.0),
      running_var(static_cast<std::size_t>(c), 1.0) {}

std::pair<std::vector<SparseTensor>, BatchNormCache> batchnorm_forward(const BatchNorm& bn,
                                                                        std::span<const SparseTensor> batch) {
  const int C = bn.channels;
  if (!(bn.eps > 0.0)) throw ContractError("batchnorm: eps must be positive");
  for (const auto& t : batch) {
    if (t.channels() != C) throw ContractError("batchnorm: channel mismatch in batch");
  }
  BatchNormCache cache;
  cache.mode = bn.mode;
  std::size_t count = 0;
  for (const auto& t : batch) count += t.num_sites();
  cache.count = count;

  std::vector<double> mean(C, 0.0), var(C, 0.0);
  if (bn.mode == NormMode::Train) {
    if (batch.empty() || count == 0) {
      throw DataError("batchnorm: train mode needs at least one active site in the batch");
    }
    for (const auto& t : batch) {
      const auto f = t.features();
      for (std::size_t r = 0; r < t.num_sites(); ++r)
        for (int c = 0; c < C; ++c) mean[c] += f[r * C + c];
    }
    for (int c = 0; c < C; ++c) mean[c] /= static_cast<double>(count);
    for (const auto& t : batch) {
      const auto f = t.features();
      for (std::size_t r = 0; r < t.num_sites(); ++r)
        for (int c = 0; c < C; ++c) {
          const double d = f[r * C + c] - mean[c];
          var[c] += d * d;
        }
    }
    for (int c = 0; c < C; ++c) var[c] /= static_cast<double>(count);
  } else {
    mean = bn.running_mean;
    var = bn.running_var;
  }

  cache.inv_std.resize(C);
  for (int c = 0; c < C; ++c) cache.inv_std[c] = 1.0 / std::sqrt(var[c] + bn.eps);
  cache.batch_mean = mean;
  cache.batch_var = var;

  std::vector<SparseTensor> out;
  out.reserve(batch.size());
  cache.normalized.reserve(batch.size());
  for (const auto& t : batch) {
    const auto f = t.features();
    std::vector<double> xhat(f.size()), y(f.size());
    for (std::size_t r = 0; r < t.num_sites(); ++r) {
      for (int c = 0; c < C; ++c) {
        const std::size_t k = r * C + c;
        xhat[k] = (f[k] - mean[c]) * cache.inv_std[c];
        y[k] = bn.gamma[c] * xhat[k] + bn.beta[c];
      }
    }
    cache.normalized.push_back(t.with_features(C, std::move(xhat)));
    out.push_back(t.with_features(C, std::move(y)));
  }
  return {std::move(out), std::move(cache)};
}

void commit_running_stats(BatchNorm& bn, const BatchNormCache& cache) {
  if (cache.mode != NormMode::Train || cache.count == 0) return;
  const double unbias = cache.count > 1 ? static_cast<double>(cache.count) / static_cast<double>(cache.count - 1) : 1.0;
  for (int c = 0; c < bn.channels; ++c) {
    bn.running_mean[c] = (1.0 - bn.momentum) * bn.running_mean[c] + bn.momentum * cache.batch_mean[c];
    bn.running_var[c] = (1.0 - bn.momentum) * bn.running_var[c] + bn.momentum * cache.batch_var[c] * unbias;
  }
}

BatchNormGradients batchnorm_backward(const BatchNorm& bn, const BatchNormCache& cache,
                                      std::span<const SparseTensor> grad_out) {
  const int C = bn.channels;
  if (grad_out.size() != cache.normalized.size()) throw ContractError("batchnorm_backward: batch size mismatch");
  BatchNormGradients g;
  g.grad_gamma.assign(C, 0.0);
  g.grad_beta.assign(C, 0.0);
  for (std::size_t b = 0; b < grad_out.size(); ++b) {
    require_support(grad_out[b], cache.normalized[b].support_ptr(), "batchnorm_backward");
    const auto go = grad_out[b].features();
    const auto xh = cache.normalized[b].features();
    for (std::size_t k = 0; k < go.size(); ++k) {
      const int c = static_cast<int>(k % C);
      g.grad_beta[c] += go[k];
      g.grad_gamma[c] += go[k] * xh[k];
    }
  }
  g.grad_input.reserve(grad_out.size());
  const double n = static_cast<double>(cache.count);
  for (std::size_t b = 0; b < grad_out.size(); ++b) {
    const auto go = grad_out[b].features();
    const auto xh = cache.normalized[b].features();
    std::vector<double> gx(go.size());
    for (std::size_t k = 0; k < go.size(); ++k) {
      const int c = static_cast<int>(k % C);
      if (cache.mode == NormMode::Train) {
        gx[k] = bn.gamma[c] * cache.inv_std[c] * (go[k] - g.grad_beta[c] / n - xh[k] * g.grad_gamma[c] / n);
      } else {
        gx[k] = bn.gamma[c] * cache.inv_std[c] * go[k];
      }
    }
    g.grad_input.push_back(grad_out[b].with_features(C, std::move(gx)));
  }
  return g;
}

std::pair<SparseTensor, ReluCache> relu_forward(const SparseTensor& x) {
  const auto f = x.features();
  std::vector<double> y(f.size());
  for (std::size_t k = 0; k < f.size(); ++k) y[k] = f[k] > 0.0 ? f[k] : 0.0;
  return {x.with_features(x.channels(), std::move(y)), ReluCache{x}};
}

SparseTensor relu_backward(const ReluCache& cache, const SparseTensor& grad_out) {
  require_support(grad_out, cache.input.support_ptr(), "relu_backward");
  const auto f = cache.input.features();
  const auto go = grad_out.features();
  std::vector<double> gx(f.size());
  for (std::size_t k = 0; k < f.size(); ++k) gx[k] = f[k] > 0.0 ? go[k] : 0.0;
  return grad_out.with_features(grad_out.channels(), std::move(gx));
}

std::pair<SparseTensor, PoolCache> maxpool2_forward(const SparseTensor& x, const RuleBookPtr& rb) {
  if (!rb || rb->mode != RuleMode::Pool2) throw ContractError("maxpool2_forward: expected a pool rulebook");
  require_support(x, rb->input_support, "maxpool2_forward");
  if (x.grid_size() != rb->input_grid) throw ContractError("maxpool2_forward: grid size mismatch");
  const int C = x.channels();
  const std::size_t n_out = rb->output_support->size();
  std::vector<double> y(n_out * C, -std::numeric_limits<double>::infinity());
  std::vector<std::uint32_t> argmax(n_out * C, 0);
  const auto f = x.features();
  for (const Rule& rule : rb->rules) {
    for (int c = 0; c < C; ++c) {
      const double v = f[static_cast<std::size_t>(rule.input) * C + c];
      const std::size_t k = static_cast<std::size_t>(rule.output) * C + c;
      if (v > y[k]) {
        y[k] = v;
        argmax[k] = rule.input;
      }
    }
  }
  SparseTensor out(rb->output_grid, C, rb->output_support, std::move(y));
  return {std::move(out), PoolCache{x, rb, std::move(argmax)}};
}

SparseTensor maxpool2_backward(const PoolCache& cache, const SparseTensor& grad_out) {
  require_support(grad_out, cache.rulebook->output_support, "maxpool2_backward");
  const int C = cache.input.channels();
  std::vector<double> gx(cache.input.num_sites() * C, 0.0);
  const auto go = grad_out.features();
  for (std::size_t k = 0; k < go.size(); ++k) {
    const std::size_t c = k % C;
    gx[static_cast<std::size_t>(cache.argmax[k]) * C + c] += go[k];
  }
  return cache.input.with_features(C, std::move(gx));
}

std::vector<double> softmax(std::span<const double> v) {
  std::vector<double> p(v.size());
  if (v.empty()) return p;
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) {
    if (!std::isfinite(x)) throw ContractError("softmax: non-finite input");
    m = std::max(m, x);
  }
  double z = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    p[k] = std::exp(v[k] - m);
    z += p[k];
  }
  for (double& x : p) x /= z;
  return p;
}

}  // namespace waferscope
