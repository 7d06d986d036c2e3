#include "waferscope/openset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <Eigen/Dense>
#include <json.hpp>

#include "waferscope/error.hpp"

namespace waferscope {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  return best;
}

std::size_t check_rows(const Rows& x, const char* what) {
  if (x.empty()) throw DataError(std::string(what) + ": no samples");
  const std::size_t d = x[0].size();
  if (d == 0) throw DataError(std::string(what) + ": zero-dimensional samples");
  for (const auto& r : x) {
    if (r.size() != d) throw ContractError(std::string(what) + ": inconsistent sample dimension");
    for (double v : r)
      if (!std::isfinite(v)) throw DataError(std::string(what) + ": non-finite sample value");
  }
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Gaussian mixture

void Gmm::prepare() {
  const auto d = static_cast<Eigen::Index>(dim);
  chol.assign(components(), {});
  log_det.assign(components(), 0.0);
  for (std::size_t k = 0; k < components(); ++k) {
    if (covariances[k].size() != static_cast<std::size_t>(dim * dim) || means[k].size() != static_cast<std::size_t>(dim)) {
      throw ContractError("GMM component " + std::to_string(k) + " has the wrong dimension");
    }
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> s(covariances[k].data(), d, d);
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) throw ContractError("GMM covariance " + std::to_string(k) + " is not positive definite");
    Eigen::MatrixXd l = llt.matrixL();
    chol[k].resize(static_cast<std::size_t>(dim * dim));
    double ld = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      ld += 2.0 * std::log(l(i, i));
      for (Eigen::Index j = 0; j < d; ++j) chol[k][static_cast<std::size_t>(i * d + j)] = l(i, j);
    }
    log_det[k] = ld;
  }
}

double Gmm::component_log_density(std::size_t k, std::span<const double> x) const {
  if (x.size() != static_cast<std::size_t>(dim)) throw ContractError("GMM input dimension mismatch");
  if (chol.size() != components()) throw ContractError("GMM not prepared");
  if (weights[k] <= 0.0) return kNegInf;
  const std::size_t d = x.size();
  const auto& l = chol[k];
  const auto& mu = means[k];
  // Forward substitution: y = L^-1 (x - mu).
  std::vector<double> y(d);
  double maha = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double s = x[i] - mu[i];
    for (std::size_t j = 0; j < i; ++j) s -= l[i * d + j] * y[j];
    y[i] = s / l[i * d + i];
    maha += y[i] * y[i];
  }
  return std::log(weights[k]) - 0.5 * (static_cast<double>(d) * kLog2Pi + log_det[k] + maha);
}

double gmm_score(const Gmm& g, std::span<const double> x) {
  std::vector<double> lp(g.components());
  for (std::size_t k = 0; k < lp.size(); ++k) lp[k] = g.component_log_density(k, x);
  return -log_sum_exp(lp);
}

double gmm_log_likelihood(const Gmm& g, const Rows& x) {
  double ll = 0.0;
  for (const auto& r : x) ll -= gmm_score(g, r);
  return ll;
}

namespace {

struct EmState {
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
};

// Hard k-means++ assignment.
std::vector<int> kmeanspp_assign(const Eigen::MatrixXd& x, int k, std::uint64_t seed) {
  const Eigen::Index n = x.rows();
  Rng rng = Rng::stream(seed, 0x6b6d);
  std::vector<Eigen::VectorXd> centers;
  centers.push_back(x.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)))).transpose());
  std::vector<double> d2(static_cast<std::size_t>(n));
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, (x.row(i).transpose() - c).squaredNorm());
      d2[static_cast<std::size_t>(i)] = best;
      total += best;
    }
    Eigen::Index pick = 0;
    if (total <= 0.0) {
      pick = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
    } else {
      double u = rng.uniform(0.0, total);
      for (pick = 0; pick < n - 1; ++pick) {
        u -= d2[static_cast<std::size_t>(pick)];
        if (u <= 0.0) break;
      }
    }
    centers.push_back(x.row(pick).transpose());
  }
  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < 20; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double dd = (x.row(i).transpose() - centers[static_cast<std::size_t>(c)]).squaredNorm();
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best) changed = true;
      assign[static_cast<std::size_t>(i)] = best;
    }
    std::vector<Eigen::VectorXd> sums(static_cast<std::size_t>(k), Eigen::VectorXd::Zero(x.cols()));
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])] += x.row(i).transpose();
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0) centers[static_cast<std::size_t>(c)] = sums[static_cast<std::size_t>(c)] / counts[static_cast<std::size_t>(c)];
    if (!changed && iter > 0) break;
  }
  return assign;
}

// Components without members take the sample farthest from every populated
// component mean.
void fill_empty_components(const Eigen::MatrixXd& x, std::vector<int>& assign, int k) {
  for (int c = 0; c < k; ++c) {
    if (std::find(assign.begin(), assign.end(), c) != assign.end()) continue;
    std::vector<Eigen::VectorXd> mus;
    for (int o = 0; o < k; ++o) {
      Eigen::VectorXd s = Eigen::VectorXd::Zero(x.cols());
      int cnt = 0;
      for (std::size_t i = 0; i < assign.size(); ++i)
        if (assign[i] == o) {
          s += x.row(static_cast<Eigen::Index>(i)).transpose();
          ++cnt;
        }
      if (cnt > 1) mus.push_back(s / cnt);
    }
    std::size_t far = 0;
    double fd = -1.0;
    for (std::size_t i = 0; i < assign.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& m : mus) best = std::min(best, (x.row(static_cast<Eigen::Index>(i)).transpose() - m).squaredNorm());
      if (mus.empty()) best = 0.0;
      if (best > fd) {
        fd = best;
        far = i;
      }
    }
    warn("GMM component " + std::to_string(c) + " has no initial members; seeded from one sample");
    assign[far] = c;
  }
}

void m_step(const Eigen::MatrixXd& x, const Eigen::MatrixXd& resp, double psi, bool diagonal, EmState& st) {
  const Eigen::Index n = x.rows(), d = x.cols(), k = resp.cols();
  for (Eigen::Index c = 0; c < k; ++c) {
    const double nk = resp.col(c).sum();
    if (nk < 1e-300) {
      st.weights[static_cast<std::size_t>(c)] = 0.0;
      continue;
    }
    Eigen::VectorXd mu = (x.transpose() * resp.col(c)) / nk;
    Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
    Eigen::MatrixXd s = centered.transpose() * resp.col(c).asDiagonal() * centered;
    s.diagonal().array() += psi;
    s /= nk;
    if (diagonal) s = Eigen::MatrixXd(s.diagonal().asDiagonal());
    st.weights[static_cast<std::size_t>(c)] = nk / static_cast<double>(n);
    st.means[static_cast<std::size_t>(c)] = mu;
    st.covs[static_cast<std::size_t>(c)] = s;
  }
  (void)d;
}

// E-step: fills resp and returns log-likelihood plus the prior term.
double e_step(const Eigen::MatrixXd& x, double psi, const EmState& st, Eigen::MatrixXd& resp) {
  const Eigen::Index n = x.rows(), d = x.cols();
  const auto k = static_cast<Eigen::Index>(st.weights.size());
  Eigen::MatrixXd logp(n, k);
  double prior = 0.0;
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (st.weights[ci] <= 0.0) {
      logp.col(c).setConstant(kNegInf);
      continue;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(st.covs[ci]);
    if (llt.info() != Eigen::Success) throw DataError("GMM covariance lost positive definiteness");
    const Eigen::MatrixXd l = llt.matrixL();
    const double ld = 2.0 * l.diagonal().array().log().sum();
    Eigen::MatrixXd centered = (x.rowwise() - st.means[ci].transpose()).transpose();
    l.triangularView<Eigen::Lower>().solveInPlace(centered);
    const Eigen::VectorXd maha = centered.colwise().squaredNorm().transpose();
    logp.col(c) = (std::log(st.weights[ci]) - 0.5 * (static_cast<double>(d) * kLog2Pi + ld)) - 0.5 * maha.array();
    Eigen::MatrixXd linv = Eigen::MatrixXd::Identity(d, d);
    l.triangularView<Eigen::Lower>().solveInPlace(linv);
    prior -= 0.5 * psi * linv.squaredNorm();
  }
  double ll = 0.0;
  resp.resize(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logp.row(i).maxCoeff();
    const double lse = m + std::log((logp.row(i).array() - m).exp().sum());
    resp.row(i) = (logp.row(i).array() - lse).exp();
    ll += lse;
  }
  return ll + prior;
}

}  // namespace

GmmFitResult gmm_fit_em(const Rows& rows, std::span<const int> labels, const GmmFitOptions& opts) {
  const std::size_t d = check_rows(rows, "GMM fit");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const int k = opts.components;
  if (k < 1) throw ConfigError("GMM needs at least one component");
  if (static_cast<std::size_t>(k) > rows.size()) {
    throw DataError("GMM with " + std::to_string(k) + " components needs at least as many samples, got " +
                    std::to_string(rows.size()));
  }
  if (!(opts.tol >= 0.0) || opts.max_iter < 0 || !(opts.ridge_scale > 0.0)) throw ConfigError("invalid GMM fit options");

  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j) x(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];

  const Eigen::VectorXd mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
  const double mean_var = cov.diagonal().mean();
  double eps = opts.ridge_scale * mean_var;
  if (!(mean_var > 1e-300)) {
    warn("GMM fit data has zero variance; the ridge alone keeps covariances invertible");
    eps = opts.ridge_scale;
  }
  const double psi = eps * static_cast<double>(n) / static_cast<double>(k);

  bool diagonal = false;
  {
    Eigen::MatrixXd reg = cov;
    reg.diagonal().array() += eps;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(reg, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > opts.max_condition) {
      warn("GMM covariance is ill-conditioned; fitting diagonal covariances");
      diagonal = true;
    }
  }

  std::vector<int> assign;
  if (opts.init == GmmInit::Labels) {
    if (labels.size() != rows.size()) throw ContractError("GMM label initialization needs one label per sample");
    for (int l : labels)
      if (l < 0 || l >= k) throw ContractError("GMM initialization label out of range");
    assign.assign(labels.begin(), labels.end());
  } else {
    assign = kmeanspp_assign(x, k, opts.seed);
  }
  fill_empty_components(x, assign, k);

  EmState st;
  st.weights.assign(static_cast<std::size_t>(k), 0.0);
  st.means.assign(static_cast<std::size_t>(k), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d)));
  st.covs.assign(static_cast<std::size_t>(k), Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)));
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) resp(i, assign[static_cast<std::size_t>(i)]) = 1.0;
  m_step(x, resp, psi, diagonal, st);

  GmmFitResult result;
  result.ridge = eps;
  double obj = e_step(x, psi, st, resp);
  result.objective.push_back(obj);
  for (int it = 0; it < opts.max_iter; ++it) {
    m_step(x, resp, psi, diagonal, st);
    const double next = e_step(x, psi, st, resp);
    result.objective.push_back(next);
    result.iterations = it + 1;
    const double gain = next - obj;
    obj = next;
    if (gain <= opts.tol * std::abs(obj)) {
      result.converged = true;
      break;
    }
  }

  Gmm& g = result.gmm;
  g.dim = static_cast<int>(d);
  g.diagonal = diagonal;
  g.weights = st.weights;
  for (int c = 0; c < k; ++c) {
    const auto& mu = st.means[static_cast<std::size_t>(c)];
    const auto& s = st.covs[static_cast<std::size_t>(c)];
    g.means.emplace_back(mu.data(), mu.data() + mu.size());
    std::vector<double> flat(d * d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) flat[i * d + j] = s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    g.covariances.push_back(std::move(flat));
  }
  g.prepare();
  return result;
}

// ---------------------------------------------------------------------------
// Threshold

CalibratedThreshold calibrate_threshold(std::span<const double> scores, double alpha) {
  if (scores.empty()) throw DataError("threshold calibration needs at least one score");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in (0, 1]");
  std::vector<double> s(scores.begin(), scores.end());
  for (double v : s)
    if (std::isnan(v)) throw DataError("calibration score is NaN");
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  CalibratedThreshold t{s.back(), alpha, s.size()};
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i > 0 && s[i] == s[i - 1]) continue;
    // s sorted ascending: |{s >= s[i]}| = size - i.
    if (static_cast<double>(s.size() - i) / n <= alpha) {
      t.eta = s[i];
      break;
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Baselines

BaselineScores baseline_scores(std::span<const double> v) {
  if (v.empty()) throw ContractError("empty score vector");
  const auto p = softmax(v);
  BaselineScores b;
  b.softmax = -*std::max_element(p.begin(), p.end());
  b.presoftmax = -*std::max_element(v.begin(), v.end());
  double h = 0.0;
  for (double q : p)
    if (q > 0.0) h -= q * std::log(q);
  b.sme = h;
  return b;
}

double Weibull::cdf(double x) const {
  const double z = x - shift;
  if (!(z > 0.0)) return 0.0;
  return -std::expm1(-std::pow(z / scale, shape));
}

Weibull fit_weibull(std::span<const double> data) {
  if (data.empty()) throw DataError("Weibull fit needs at least one value");
  std::vector<double> x;
  x.reserve(data.size());
  for (double v : data) {
    if (!std::isfinite(v) || v < 0.0) throw DataError("Weibull fit values must be finite and non-negative");
    x.push_back(std::max(v, kWeibullScaleFloor));
  }
  const double m = *std::max_element(x.begin(), x.end());
  std::vector<double> lg(x.size());
  double mean_log = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lg[i] = std::log(x[i] / m);
    mean_log += lg[i];
  }
  mean_log /= static_cast<double>(x.size());
  // Profile-likelihood equation in the shape; increasing in k.
  auto g = [&](double k) {
    double num = 0.0, den = 0.0;
    for (double l : lg) {
      const double w = std::exp(k * l);
      num += w * l;
      den += w;
    }
    return num / den - 1.0 / k - mean_log;
  };
  double shape;
  if (g(kWeibullMaxShape) <= 0.0) {
    shape = kWeibullMaxShape;
  } else {
    double lo = 1e-3, hi = kWeibullMaxShape;
    for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
      const double mid = std::sqrt(lo * hi);
      if (g(mid) < 0.0) lo = mid; else hi = mid;
    }
    shape = 0.5 * (lo + hi);
  }
  double acc = 0.0;
  for (double l : lg) acc += std::exp(shape * l);
  Weibull w;
  w.shape = shape;
  w.scale = std::max(kWeibullScaleFloor, m * std::pow(acc / static_cast<double>(x.size()), 1.0 / shape));
  w.shift = 0.0;
  return w;
}

namespace {
double euclid(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}
}  // namespace

OpenMaxModel openmax_fit(const Rows& scores, std::span<const int> labels, std::span<const int> predictions,
                         int tail_size) {
  const std::size_t c = check_rows(scores, "OpenMax fit");
  if (labels.size() != scores.size() || predictions.size() != scores.size()) {
    throw ContractError("OpenMax fit needs one label and prediction per score vector");
  }
  if (tail_size < 1) throw ConfigError("OpenMax tail size must be at least 1");
  OpenMaxModel m;
  m.num_classes = static_cast<int>(c);
  m.tail_size = tail_size;
  m.mav.assign(c, std::vector<double>(c, 0.0));
  m.weibull.assign(c, Weibull{});
  m.fitted.assign(c, false);
  for (std::size_t k = 0; k < c; ++k) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (labels[i] == static_cast<int>(k) && predictions[i] == static_cast<int>(k)) idx.push_back(i);
    if (idx.empty()) {
      warn("OpenMax: class " + std::to_string(k) + " has no correctly classified training samples; excluded");
      continue;
    }
    for (std::size_t i : idx)
      for (std::size_t j = 0; j < c; ++j) m.mav[k][j] += scores[i][j];
    for (double& v : m.mav[k]) v /= static_cast<double>(idx.size());
    std::vector<double> dist;
    for (std::size_t i : idx) dist.push_back(euclid(scores[i], m.mav[k]));
    std::sort(dist.begin(), dist.end(), std::greater<>());
    dist.resize(std::min(dist.size(), static_cast<std::size_t>(tail_size)));
    m.weibull[k] = fit_weibull(dist);
    m.fitted[k] = true;
  }
  if (std::none_of(m.fitted.begin(), m.fitted.end(), [](bool b) { return b; })) {
    throw DataError("OpenMax: no class has correctly classified training samples");
  }
  return m;
}

double openmax_score(const OpenMaxModel& m, std::span<const double> v) {
  if (v.size() != static_cast<std::size_t>(m.num_classes)) throw ContractError("OpenMax score dimension mismatch");
  auto k = static_cast<std::size_t>(argmax_lowest(v));
  if (!m.fitted[k]) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < m.fitted.size(); ++o) {
      if (!m.fitted[o]) continue;
      const double dd = euclid(v, m.mav[o]);
      if (dd < best) {
        best = dd;
        k = o;
      }
    }
  }
  return m.weibull[k].cdf(euclid(v, m.mav[k]));
}

CiModel ci_fit(const Rows& x, double lambda) {
  const std::size_t d = check_rows(x, "CI fit");
  if (x.size() < 2) throw DataError("CI fit needs at least 2 samples");
  if (!(lambda > 0.0)) throw ConfigError("CI lambda must be positive");
  CiModel m;
  m.lambda = lambda;
  m.mean.assign(d, 0.0);
  m.stddev.assign(d, 0.0);
  for (const auto& r : x)
    for (std::size_t j = 0; j < d; ++j) m.mean[j] += r[j];
  for (double& v : m.mean) v /= static_cast<double>(x.size());
  for (const auto& r : x)
    for (std::size_t j = 0; j < d; ++j) m.stddev[j] += (r[j] - m.mean[j]) * (r[j] - m.mean[j]);
  std::size_t floored = 0;
  for (double& v : m.stddev) {
    v = std::sqrt(v / static_cast<double>(x.size() - 1));
    if (v < kCiStddevFloor) {
      v = kCiStddevFloor;
      ++floored;
    }
  }
  if (floored > 0) warn("CI fit: " + std::to_string(floored) + " zero-variance dimension(s) floored");
  return m;
}

int ci_score(const CiModel& m, std::span<const double> x) {
  if (x.size() != m.mean.size()) throw ContractError("CI score dimension mismatch");
  int count = 0;
  for (std::size_t j = 0; j < x.size(); ++j)
    if (std::abs(x[j] - m.mean[j]) > m.lambda * m.stddev[j]) ++count;
  return count;
}

double iforest_c(double n) {
  if (n <= 1.0) return 0.0;
  const double h = std::log(n - 1.0) + 0.5772156649;
  return 2.0 * h - 2.0 * (n - 1.0) / n;
}

namespace {

int build_itree(IsolationTree& t, const Rows& x, std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi,
                int depth, int limit, Rng& rng) {
  const int node = static_cast<int>(t.nodes.size());
  t.nodes.push_back({});
  t.nodes[static_cast<std::size_t>(node)].size = static_cast<int>(hi - lo);
  if (depth >= limit || hi - lo <= 1) return node;
  const std::size_t d = x[0].size();
  std::vector<std::size_t> candidates;
  std::vector<double> mins(d), maxs(d);
  for (std::size_t f = 0; f < d; ++f) {
    double mn = std::numeric_limits<double>::infinity(), mx = -mn;
    for (std::size_t i = lo; i < hi; ++i) {
      mn = std::min(mn, x[idx[i]][f]);
      mx = std::max(mx, x[idx[i]][f]);
    }
    mins[f] = mn;
    maxs[f] = mx;
    if (mx > mn) candidates.push_back(f);
  }
  if (candidates.empty()) return node;
  const std::size_t f = candidates[rng.index(candidates.size())];
  double split = rng.uniform(mins[f], maxs[f]);
  if (!(split > mins[f])) split = 0.5 * (mins[f] + maxs[f]);
  const auto mid_it = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(lo), idx.begin() + static_cast<std::ptrdiff_t>(hi),
                                     [&](std::size_t i) { return x[i][f] < split; });
  const auto mid = static_cast<std::size_t>(mid_it - idx.begin());
  const int left = build_itree(t, x, idx, lo, mid, depth + 1, limit, rng);
  const int right = build_itree(t, x, idx, mid, hi, depth + 1, limit, rng);
  auto& nd = t.nodes[static_cast<std::size_t>(node)];
  nd.feature = static_cast<int>(f);
  nd.split = split;
  nd.left = left;
  nd.right = right;
  return node;
}

}  // namespace

IsolationForest iforest_fit(const Rows& x, int trees, int subsample, std::uint64_t seed) {
  const std::size_t d = check_rows(x, "Isolation Forest fit");
  if (x.size() < 2) throw DataError("Isolation Forest needs at least 2 samples");
  if (trees < 1 || subsample < 2) throw ConfigError("Isolation Forest needs trees >= 1 and subsample >= 2");
  IsolationForest f;
  f.dim = static_cast<int>(d);
  f.subsample = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(subsample), x.size()));
  f.normalizer = iforest_c(f.subsample);
  const int limit = static_cast<int>(std::ceil(std::log2(static_cast<double>(f.subsample))));
  for (int t = 0; t < trees; ++t) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(t), 0x1f0);
    std::vector<std::size_t> all(x.size());
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < static_cast<std::size_t>(f.subsample); ++i) {
      const std::size_t j = i + rng.index(all.size() - i);
      std::swap(all[i], all[j]);
    }
    all.resize(static_cast<std::size_t>(f.subsample));
    IsolationTree tree;
    build_itree(tree, x, all, 0, all.size(), 0, limit, rng);
    f.trees.push_back(std::move(tree));
  }
  return f;
}

double iforest_path_length(const IsolationTree& t, std::span<const double> x) {
  int node = 0;
  int depth = 0;
  while (t.nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const auto& nd = t.nodes[static_cast<std::size_t>(node)];
    node = x[static_cast<std::size_t>(nd.feature)] < nd.split ? nd.left : nd.right;
    ++depth;
  }
  return depth + iforest_c(t.nodes[static_cast<std::size_t>(node)].size);
}

double iforest_score(const IsolationForest& f, std::span<const double> x) {
  if (x.size() != static_cast<std::size_t>(f.dim)) throw ContractError("Isolation Forest input dimension mismatch");
  double total = 0.0;
  for (const auto& t : f.trees) total += iforest_path_length(t, x);
  const double mean = total / static_cast<double>(f.trees.size());
  return std::exp2(-mean / f.normalizer);
}

// ---------------------------------------------------------------------------
// Scorer selection

std::string_view scorer_name(ScorerKind k) {
  switch (k) {
    case ScorerKind::Gmm: return "gmm";
    case ScorerKind::SoftMax: return "softmax";
    case ScorerKind::PreSoftMax: return "presoftmax";
    case ScorerKind::OpenMax: return "openmax";
    case ScorerKind::Sme: return "sme";
    case ScorerKind::IForest: return "iforest";
    case ScorerKind::Ci: return "ci";
  }
  return "?";
}

ScorerKind parse_scorer(std::string_view name) {
  for (ScorerKind k : kAllScorers)
    if (scorer_name(k) == name) return k;
  throw ConfigError("unknown scorer \"" + std::string(name) +
                    "\"; valid scorers: gmm, softmax, presoftmax, openmax, sme, iforest, ci");
}

NoveltyScorer NoveltyScorer::fit(ScorerKind kind, const ScorerFitData& data, const ScorerOptions& opts) {
  NoveltyScorer s;
  s.kind_ = kind;
  switch (kind) {
    case ScorerKind::Gmm: {
      GmmFitOptions go = opts.gmm;
      go.components = data.num_classes;
      go.seed = opts.seed;
      s.gmm_ = std::make_shared<Gmm>(gmm_fit_em(data.fit_latents, data.fit_labels, go).gmm);
      break;
    }
    case ScorerKind::OpenMax: {
      std::vector<int> pred;
      for (const auto& v : data.train_scores) pred.push_back(argmax_lowest(v));
      s.openmax_ = std::make_shared<OpenMaxModel>(openmax_fit(data.train_scores, data.train_labels, pred, opts.openmax_tail));
      break;
    }
    case ScorerKind::Ci:
      s.ci_ = std::make_shared<CiModel>(ci_fit(data.fit_latents, opts.ci_lambda));
      break;
    case ScorerKind::IForest:
      s.iforest_ = std::make_shared<IsolationForest>(
          iforest_fit(data.fit_latents, opts.iforest_trees, opts.iforest_subsample, opts.seed));
      break;
    case ScorerKind::SoftMax:
    case ScorerKind::PreSoftMax:
    case ScorerKind::Sme:
      break;
  }
  return s;
}

double NoveltyScorer::score(std::span<const double> latent, std::span<const double> class_scores) const {
  switch (kind_) {
    case ScorerKind::Gmm: return gmm_score(*gmm_, latent);
    case ScorerKind::SoftMax: return baseline_scores(class_scores).softmax;
    case ScorerKind::PreSoftMax: return baseline_scores(class_scores).presoftmax;
    case ScorerKind::Sme: return baseline_scores(class_scores).sme;
    case ScorerKind::OpenMax: return openmax_score(*openmax_, class_scores);
    case ScorerKind::IForest: return iforest_score(*iforest_, latent);
    case ScorerKind::Ci: return ci_score(*ci_, latent);
  }
  return 0.0;
}

std::string NoveltyScorer::to_json() const {
  nlohmann::ordered_json j;
  j["scorer"] = std::string(scorer_name(kind_));
  if (gmm_) {
    j["gmm"] = {{"dim", gmm_->dim},
                {"diagonal", gmm_->diagonal},
                {"weights", gmm_->weights},
                {"means", gmm_->means},
                {"covariances", gmm_->covariances}};
  }
  if (openmax_) {
    auto w = nlohmann::ordered_json::array();
    for (const auto& wb : openmax_->weibull) w.push_back({wb.shape, wb.scale, wb.shift});
    j["openmax"] = {{"num_classes", openmax_->num_classes},
                    {"tail_size", openmax_->tail_size},
                    {"mav", openmax_->mav},
                    {"weibull", w},
                    {"fitted", openmax_->fitted}};
  }
  if (ci_) j["ci"] = {{"lambda", ci_->lambda}, {"mean", ci_->mean}, {"stddev", ci_->stddev}};
  if (iforest_) {
    auto trees = nlohmann::ordered_json::array();
    for (const auto& t : iforest_->trees) {
      auto nodes = nlohmann::ordered_json::array();
      for (const auto& n : t.nodes) nodes.push_back({n.feature, n.split, n.left, n.right, n.size});
      trees.push_back(std::move(nodes));
    }
    j["iforest"] = {{"dim", iforest_->dim},
                    {"subsample", iforest_->subsample},
                    {"normalizer", iforest_->normalizer},
                    {"trees", trees}};
  }
  return j.dump();
}

NoveltyScorer NoveltyScorer::from_json(std::string_view text) {
  NoveltyScorer s;
  try {
    const auto j = nlohmann::json::parse(text);
    s.kind_ = parse_scorer(j.at("scorer").get<std::string>());
    if (s.kind_ == ScorerKind::Gmm) {
      const auto& g = j.at("gmm");
      Gmm m;
      m.dim = g.at("dim").get<int>();
      m.diagonal = g.at("diagonal").get<bool>();
      m.weights = g.at("weights").get<std::vector<double>>();
      m.means = g.at("means").get<Rows>();
      m.covariances = g.at("covariances").get<Rows>();
      if (m.means.size() != m.weights.size() || m.covariances.size() != m.weights.size()) {
        throw DataError("scorer file: GMM component arrays disagree in length");
      }
      m.prepare();
      s.gmm_ = std::make_shared<Gmm>(std::move(m));
    } else if (s.kind_ == ScorerKind::OpenMax) {
      const auto& o = j.at("openmax");
      OpenMaxModel m;
      m.num_classes = o.at("num_classes").get<int>();
      m.tail_size = o.at("tail_size").get<int>();
      m.mav = o.at("mav").get<Rows>();
      for (const auto& w : o.at("weibull")) m.weibull.push_back({w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>()});
      m.fitted = o.at("fitted").get<std::vector<bool>>();
      s.openmax_ = std::make_shared<OpenMaxModel>(std::move(m));
    } else if (s.kind_ == ScorerKind::Ci) {
      const auto& c = j.at("ci");
      CiModel m;
      m.lambda = c.at("lambda").get<double>();
      m.mean = c.at("mean").get<std::vector<double>>();
      m.stddev = c.at("stddev").get<std::vector<double>>();
      s.ci_ = std::make_shared<CiModel>(std::move(m));
    } else if (s.kind_ == ScorerKind::IForest) {
      const auto& f = j.at("iforest");
      IsolationForest m;
      m.dim = f.at("dim").get<int>();
      m.subsample = f.at("subsample").get<int>();
      m.normalizer = f.at("normalizer").get<double>();
      for (const auto& t : f.at("trees")) {
        IsolationTree tree;
        for (const auto& n : t) {
          tree.nodes.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                                n.at(4).get<int>()});
        }
        m.trees.push_back(std::move(tree));
      }
      s.iforest_ = std::make_shared<IsolationForest>(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("scorer file: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Open-set decision

OpenDecision decide_open(double mean_novelty, std::vector<double> mean_probabilities, double eta) {
  if (std::isnan(mean_novelty)) throw ContractError("novelty score is NaN");
  if (mean_probabilities.empty()) throw ContractError("no class scores");
  OpenDecision d;
  d.mean_novelty = mean_novelty;
  d.novel = mean_novelty > eta;
  d.class_index = d.novel ? -1 : argmax_lowest(mean_probabilities);
  d.mean_probabilities = std::move(mean_probabilities);
  return d;
}

OpenDecision open_classify(const Sscn& model, const NoveltyScorer& scorer, double eta, const Wdm& w, int n,
                           const TestTransformSet& theta, const NoiseDist* noise, Rng& rng) {
  if (n < 1) throw ContractError("open_classify needs N >= 1");
  const auto batch = make_test_batch(w, n, theta, noise, rng);
  double total = 0.0;
  std::vector<double> probs(static_cast<std::size_t>(model.config.num_classes), 0.0);
  for (const auto& a : batch) {
    const auto out = forward(model, to_tensor(a), NormMode::Eval);
    total += scorer.score(out.latent, out.scores);
    const auto p = softmax(out.scores);
    for (std::size_t k = 0; k < probs.size(); ++k) probs[k] += p[k];
  }
  for (double& p : probs) p /= static_cast<double>(n);
  return decide_open(total / static_cast<double>(n), std::move(probs), eta);
}

}  // namespace waferscope
