#pragma once

// Brute-force integration of (likelihood)^eta x prior for small linear models.
// Every quantity is a plain sum of the raw integrand over a grid; nothing
// below uses conjugate update formulas.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace oracle {

struct Problem {
  Eigen::MatrixXd x;  // n x d, rows are points
  Eigen::VectorXd y;
  double eta = 1.0;
  double prior_scale = 1.0;              // Sigma0 = prior_scale * I, beta0 = 0
  std::optional<double> fixed_sigma2;    // set for a known variance
  double a0 = 1.0, b0 = 1.0 / 40.0;      // inverse-gamma prior otherwise
  Eigen::VectorXd x_new;
  double y_new = 0.0;
  std::vector<double> flat_etas;         // eta' values for the mix loss
};

struct Result {
  double log_marginal = 0.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd scaled_covariance;  // E[(beta - mean)(beta - mean)' / sigma^2] for IG, Cov for fixed
  double shape = std::numeric_limits<double>::quiet_NaN();
  double scale = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> mix;  // -(1/eta') log E[f(y_new | x_new)^eta'], one per flat_etas
};

namespace detail {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Enumerate z in [-zmax, zmax]^d with step h.
inline std::vector<Eigen::VectorXd> cube(int d, double zmax, double h) {
  const int m = static_cast<int>(std::lround(2.0 * zmax / h));
  std::vector<Eigen::VectorXd> out;
  std::vector<int> idx(d, 0);
  while (true) {
    Eigen::VectorXd z(d);
    for (int j = 0; j < d; ++j) z[j] = -zmax + h * idx[j];
    out.push_back(z);
    int j = 0;
    while (j < d && ++idx[j] > m) idx[j++] = 0;
    if (j == d) break;
  }
  return out;
}

}  // namespace detail

inline Result integrate(const Problem& pb) {
  using namespace detail;
  const int d = static_cast<int>(pb.x.cols());
  const double n = static_cast<double>(pb.y.size());
  const double eta = pb.eta;
  const Eigen::MatrixXd p0 = Eigen::MatrixXd::Identity(d, d) / pb.prior_scale;
  const double log_det0 = d * std::log(pb.prior_scale);

  // Grid placement only: centre and shape of the integrand in beta.
  const Eigen::MatrixXd lam = p0 + eta * pb.x.transpose() * pb.x;
  const Eigen::MatrixXd lam_inv = lam.inverse();
  const Eigen::VectorXd c = lam_inv * (eta * pb.x.transpose() * pb.y);
  const Eigen::MatrixXd chol = lam_inv.llt().matrixL();
  const double log_det_chol = chol.diagonal().array().log().sum();

  const double zmax = 7.0, hz = 0.5;
  const auto zs = cube(d, zmax, hz);
  const double log_cell = d * std::log(hz);

  struct ZTerm {
    Eigen::VectorXd v;
    double rss1, rss2, pq1, pq2, r1;
  };
  const Eigen::VectorXd resid_c = pb.y - pb.x * c;
  const double rss0 = resid_c.squaredNorm();
  const double pq0 = c.dot(p0 * c);
  const double rnew0 = pb.y_new - pb.x_new.dot(c);
  std::vector<ZTerm> terms;
  terms.reserve(zs.size());
  for (const auto& z : zs) {
    const Eigen::VectorXd v = chol * z;
    const Eigen::VectorXd xv = pb.x * v;
    terms.push_back(ZTerm{v, -2.0 * xv.dot(resid_c), xv.squaredNorm(), 2.0 * v.dot(p0 * c),
                          v.dot(p0 * v), pb.x_new.dot(v)});
  }

  // Variance grid: t = log sigma^2.
  std::vector<double> ts;
  double ht = 1.0;
  if (pb.fixed_sigma2) {
    ts.push_back(std::log(*pb.fixed_sigma2));
  } else {
    const double a = pb.a0 + 0.5 * eta * n;
    const double b = pb.b0 + 0.5 * eta * rss0;
    const double t0 = std::log(b / a);
    ht = 0.04;
    for (double t = t0 - 9.0; t <= t0 + 40.0 / a + 4.0; t += ht) ts.push_back(t);
  }

  const std::size_t nf = pb.flat_etas.size();
  // log integrand at (t, z) without the part that only depends on t.
  auto log_z_part = [&](double sig, double s2, const ZTerm& zt) {
    const double rss = sig * zt.rss1 + s2 * zt.rss2;
    const double pq = sig * zt.pq1 + s2 * zt.pq2;
    return -0.5 * eta * rss / s2 - 0.5 * pq / s2;
  };
  auto log_t_part = [&](double t) {
    const double s2 = std::exp(t);
    double lv = -0.5 * eta * n * (kLog2Pi + t) - 0.5 * eta * rss0 / s2;
    lv += -0.5 * d * (kLog2Pi + t) - 0.5 * log_det0 - 0.5 * pq0 / s2;
    lv += d * 0.5 * t + log_det_chol;  // d beta = sigma^d |L| dz
    if (!pb.fixed_sigma2) {
      lv += pb.a0 * std::log(pb.b0) - std::lgamma(pb.a0) - (pb.a0 + 1.0) * t - pb.b0 / s2;
      lv += t;  // d sigma^2 = sigma^2 dt
    }
    return lv;
  };

  // Per t: S0 = sum w, S1 = sum w v, S2 = sum w v v', F_k = sum w f^eta'_k, with
  // w relative to exp(zmax_t); then combined across t in log space.
  struct Slice {
    double log_scale, s0;
    Eigen::VectorXd s1;
    Eigen::MatrixXd s2;
    std::vector<double> f;
    double t;
  };
  std::vector<Slice> slices;
  std::vector<double> lz(terms.size());
  for (double t : ts) {
    const double s2 = std::exp(t), sig = std::sqrt(s2);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < terms.size(); ++i) {
      lz[i] = log_z_part(sig, s2, terms[i]);
      mx = std::max(mx, lz[i]);
    }
    Slice sl{log_t_part(t) + mx, 0.0, Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Zero(d, d),
             std::vector<double>(nf, 0.0), t};
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const double w = std::exp(lz[i] - mx);
      if (w < 1e-300) continue;
      const ZTerm& zt = terms[i];
      sl.s0 += w;
      sl.s1.noalias() += w * zt.v;
      sl.s2.noalias() += w * zt.v * zt.v.transpose();
      const double rn = rnew0 - sig * zt.r1;
      const double log_f = -0.5 * (kLog2Pi + t) - 0.5 * rn * rn / s2;
      for (std::size_t k = 0; k < nf; ++k) sl.f[k] += w * std::exp(pb.flat_etas[k] * log_f);
    }
    slices.push_back(std::move(sl));
  }
  double ref = -std::numeric_limits<double>::infinity();
  for (const auto& sl : slices) ref = std::max(ref, sl.log_scale + std::log(sl.s0));

  // beta = c + sigma v.
  double z0 = 0.0, inv1 = 0.0, inv2 = 0.0;
  Eigen::VectorXd ev = Eigen::VectorXd::Zero(d);     // E[sigma v]
  Eigen::MatrixXd evv = Eigen::MatrixXd::Zero(d, d); // E[v v'] (sigma^2 cancels against 1/sigma^2)
  Eigen::VectorXd evs = Eigen::VectorXd::Zero(d);    // E[v / sigma]
  std::vector<double> flat(nf, 0.0);
  for (const auto& sl : slices) {
    const double scale = std::exp(sl.log_scale - ref);
    const double s2 = std::exp(sl.t), sig = std::sqrt(s2);
    z0 += scale * sl.s0;
    ev += (scale * sig) * sl.s1;
    evv += scale * (pb.fixed_sigma2 ? s2 : 1.0) * sl.s2;
    evs += (scale / sig) * sl.s1;
    inv1 += scale * sl.s0 / s2;
    inv2 += scale * sl.s0 / (s2 * s2);
    for (std::size_t k = 0; k < nf; ++k) flat[k] += scale * sl.f[k];
  }

  Result r;
  r.log_marginal = ref + std::log(z0) + log_cell + std::log(ht);
  const Eigen::VectorXd dev = ev / z0;  // E[beta] - c
  r.mean = c + dev;
  const double e_inv = inv1 / z0;
  if (pb.fixed_sigma2) {
    r.scaled_covariance = (evv / z0 - dev * dev.transpose()) / *pb.fixed_sigma2;
  } else {
    // E[(beta-m)(beta-m)'/s2] with beta - m = sigma v - dev.
    const Eigen::VectorXd evs_n = evs / z0;
    r.scaled_covariance = evv / z0 - dev * evs_n.transpose() - evs_n * dev.transpose() +
                          e_inv * dev * dev.transpose();
    const double e_inv2 = inv2 / z0;
    r.shape = 1.0 / (e_inv2 / (e_inv * e_inv) - 1.0);
    r.scale = r.shape / e_inv;
  }
  for (std::size_t k = 0; k < nf; ++k) r.mix.push_back(-std::log(flat[k] / z0) / pb.flat_etas[k]);
  return r;
}

}  // namespace oracle
