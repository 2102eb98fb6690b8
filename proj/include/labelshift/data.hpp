// Synthetic label-shift data: an isotropic Gaussian mixture whose Bayes
// posterior is closed-form, Dirichlet test marginals, label-conditional
// resampling, relaxed-shift feature perturbation, and IDX ingestion.

#ifndef LABELSHIFT_DATA_HPP
#define LABELSHIFT_DATA_HPP

#include "labelshift/rng.hpp"
#include "labelshift/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace labelshift {

/// Class-conditional p(x|y) = N(mean_y, sigma^2 I), shared by every split.
class GaussianMixtureSpec {
 public:
  GaussianMixtureSpec(Matrix means, double sigma) : means_(std::move(means)), sigma_(sigma) {
    if (!(sigma_ > 0.0) || !std::isfinite(sigma_)) throw Error(ErrorCode::kInvalidArgument, "sigma must be positive");
    if (means_.rows() < 2) throw Error(ErrorCode::kInvalidArgument, "mixture needs at least 2 classes");
    if (means_.cols() < 1) throw Error(ErrorCode::kInvalidArgument, "mixture needs d >= 1");
    if (!means_.allFinite()) throw Error(ErrorCode::kInvalidArgument, "non-finite mixture mean");
    for (Eigen::Index a = 0; a < means_.rows(); ++a)
      for (Eigen::Index b = a + 1; b < means_.rows(); ++b)
        if (means_.row(a) == means_.row(b)) throw Error(ErrorCode::kInvalidArgument, "mixture means must be distinct");
  }

  /// m classes with means at (separation / sqrt 2) * e_c, so every pair of
  /// means is exactly `separation` apart. Coordinates past the first m
  /// (when d > m) carry pure noise.
  static GaussianMixtureSpec simplex(std::size_t m, double separation, double sigma, std::size_t d = 0) {
    if (d == 0) d = m;
    if (d < m) throw Error(ErrorCode::kInvalidArgument, "simplex mixture needs d >= m");
    Matrix means = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(m); ++c) means(c, c) = separation / std::sqrt(2.0);
    return GaussianMixtureSpec(std::move(means), sigma);
  }

  const Matrix& means() const noexcept { return means_; }
  double sigma() const noexcept { return sigma_; }
  std::size_t classes() const noexcept { return static_cast<std::size_t>(means_.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(means_.cols()); }

 private:
  Matrix means_;
  double sigma_;
};

struct ShiftSpec {
  double alpha = 1.0;
  std::size_t n_te = 5000;
  std::uint64_t seed = 0;
};

/// Perturbation that moves p(x|y) slightly between train and test.
struct RelaxedShiftSpec {
  double apply_prob = 0.3;
  double noise_sigma_lo = 0.1;
  double noise_sigma_hi = 0.5;
  double brightness_delta = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(apply_prob >= 0.0 && apply_prob <= 1.0))
      throw Error(ErrorCode::kInvalidArgument, "apply_prob must lie in [0, 1]");
    if (!(noise_sigma_lo > 0.0 && noise_sigma_lo <= noise_sigma_hi))
      throw Error(ErrorCode::kInvalidArgument, "noise sigma range must satisfy 0 < lo <= hi");
    if (!(brightness_delta >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "brightness_delta must be >= 0");
  }

  // Presets for the 30% and 50% perturbation settings.
  static RelaxedShiftSpec relaxed() { return {0.3, 0.1, 0.5, 0.1, 0}; }
  static RelaxedShiftSpec relaxed_strong() { return {0.5, 0.1, 0.7, 0.2, 0}; }
};

namespace detail {

inline int draw_label(const LabelMarginal& marginal, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double t = u(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t c = 0; c < marginal.classes(); ++c) {
    if (marginal[c] <= 0.0) continue;
    last = c;
    acc += marginal[c];
    if (t < acc) return static_cast<int>(c);
  }
  return static_cast<int>(last);
}

}  // namespace detail

inline LabeledDataset gen_gaussian_mixture(const GaussianMixtureSpec& spec, const LabelMarginal& marginal,
                                           std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "sample count must be positive");
  if (marginal.classes() != spec.classes()) throw Error(ErrorCode::kDimensionMismatch, "marginal/mixture class mismatch");
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, spec.sigma());
  const auto d = static_cast<Eigen::Index>(spec.dim());
  Matrix x(static_cast<Eigen::Index>(n), d);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    int c = detail::draw_label(marginal, rng);
    y[i] = c;
    for (Eigen::Index k = 0; k < d; ++k) x(static_cast<Eigen::Index>(i), k) = spec.means()(c, k) + gauss(rng);
  }
  return LabeledDataset(std::move(x), std::move(y), spec.classes());
}

/// Bayes posterior p(y|x) under the mixture with prior `marginal`.
inline Vector true_posterior(const GaussianMixtureSpec& spec, const LabelMarginal& marginal,
                             const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  const auto m = static_cast<Eigen::Index>(spec.classes());
  Vector logit(m);
  double best = -std::numeric_limits<double>::infinity();
  const double inv_two_var = 1.0 / (2.0 * spec.sigma() * spec.sigma());
  for (Eigen::Index c = 0; c < m; ++c) {
    double prior = marginal[static_cast<std::size_t>(c)];
    logit[c] = prior > 0.0 ? std::log(prior) - (x - spec.means().row(c)).squaredNorm() * inv_two_var
                           : -std::numeric_limits<double>::infinity();
    best = std::max(best, logit[c]);
  }
  // Scalar exp: the vectorized path maps -inf to a denormal, not 0.
  Vector p = (logit.array() - best).unaryExpr([](double v) { return std::exp(v); });
  return p / p.sum();
}

/// Posterior for every row of `features`, as a floored probability matrix.
inline ProbabilityMatrix true_posterior_matrix(const GaussianMixtureSpec& spec, const LabelMarginal& marginal,
                                               const Matrix& features) {
  Matrix out(features.rows(), static_cast<Eigen::Index>(spec.classes()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) out.row(i) = true_posterior(spec, marginal, features.row(i)).transpose();
  return ProbabilityMatrix::floored(std::move(out));
}

/// One draw from a symmetric Dirichlet(alpha * 1_m) via normalized Gammas.
inline LabelMarginal sample_dirichlet_marginal(double alpha, std::size_t m, std::uint64_t seed) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw Error(ErrorCode::kInvalidArgument, "alpha must be positive");
  if (m < 2) throw Error(ErrorCode::kInvalidArgument, "need at least 2 classes");
  Rng rng(seed);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  Vector g(static_cast<Eigen::Index>(m));
  // Tiny alpha can underflow every Gamma draw to zero; redraw in that case.
  for (int attempt = 0; attempt < 64; ++attempt) {
    for (Eigen::Index c = 0; c < g.size(); ++c) g[c] = gamma(rng);
    if (g.sum() > 0.0) return LabelMarginal::normalized(g);
  }
  g.setZero();
  g[static_cast<Eigen::Index>(rng() % m)] = 1.0;
  return LabelMarginal(g);
}

/// Draws n labels i.i.d. from `marginal` and, for each, a feature row
/// uniformly from the pool's samples of that label.
inline LabeledDataset resample_by_marginal(const LabeledDataset& pool, const LabelMarginal& marginal, std::size_t n,
                                           std::uint64_t seed) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "sample count must be positive");
  if (marginal.classes() != pool.classes()) throw Error(ErrorCode::kDimensionMismatch, "marginal/pool class mismatch");
  std::vector<std::vector<std::size_t>> by_class(pool.classes());
  for (std::size_t i = 0; i < pool.size(); ++i) by_class[static_cast<std::size_t>(pool.labels()[i])].push_back(i);
  for (std::size_t c = 0; c < pool.classes(); ++c)
    if (marginal[c] > 0.0 && by_class[c].empty())
      throw Error(ErrorCode::kUnsupportedClass, "unsupported class " + std::to_string(c));
  Rng rng(seed);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& members = by_class[static_cast<std::size_t>(detail::draw_label(marginal, rng))];
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    idx[i] = members[pick(rng)];
  }
  return pool.subset(idx);
}

/// With probability apply_prob per sample, adds N(0, s^2 I) noise with s
/// uniform in the sigma range plus a constant offset uniform in
/// [-brightness_delta, brightness_delta]. Labels are untouched.
inline LabeledDataset perturb_relaxed(const LabeledDataset& data, const RelaxedShiftSpec& spec) {
  spec.validate();
  if (spec.apply_prob == 0.0) return data;
  Rng rng(spec.seed);
  std::bernoulli_distribution coin(spec.apply_prob);
  std::uniform_real_distribution<double> sigma_dist(spec.noise_sigma_lo, spec.noise_sigma_hi);
  std::uniform_real_distribution<double> offset_dist(-spec.brightness_delta, spec.brightness_delta);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix x = data.features();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (!coin(rng)) continue;
    double s = sigma_dist(rng);
    double offset = spec.brightness_delta > 0.0 ? offset_dist(rng) : 0.0;
    for (Eigen::Index k = 0; k < x.cols(); ++k) x(i, k) += s * gauss(rng) + offset;
  }
  return LabeledDataset(std::move(x), data.labels(), data.classes());
}

// IDX files are big-endian: a 4-byte magic, one 4-byte size per dimension,
// then unsigned bytes.
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& path) {
  if (buf.size() < offset + 4) throw Error(ErrorCode::kIdxTruncated, "truncated IDX header in " + path);
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

}  // namespace detail

inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t m = 10) {
  auto img = detail::read_all(images_path);
  auto lab = detail::read_all(labels_path);
  if (detail::read_be32(img, 0, images_path) != kIdxImageMagic)
    throw Error(ErrorCode::kIdxBadMagic, "bad IDX image magic in " + images_path);
  if (detail::read_be32(lab, 0, labels_path) != kIdxLabelMagic)
    throw Error(ErrorCode::kIdxBadMagic, "bad IDX label magic in " + labels_path);
  const std::size_t n = detail::read_be32(img, 4, images_path);
  const std::size_t rows = detail::read_be32(img, 8, images_path);
  const std::size_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t n_labels = detail::read_be32(lab, 4, labels_path);
  if (n != n_labels)
    throw Error(ErrorCode::kIdxCountMismatch,
                "image count " + std::to_string(n) + " differs from label count " + std::to_string(n_labels));
  const std::size_t d = rows * cols;
  if (img.size() < 16 + n * d) throw Error(ErrorCode::kIdxTruncated, "truncated IDX image data in " + images_path);
  if (lab.size() < 8 + n) throw Error(ErrorCode::kIdxTruncated, "truncated IDX label data in " + labels_path);
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "IDX file holds no samples");

  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* px = img.data() + 16 + i * d;
    for (std::size_t k = 0; k < d; ++k) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = px[k] / 255.0;
    int label = lab[8 + i];
    if (static_cast<std::size_t>(label) >= m)
      throw Error(ErrorCode::kIdxLabelRange, "label " + std::to_string(label) + " out of range in " + labels_path);
    y[i] = label;
  }
  return LabeledDataset(std::move(x), std::move(y), m);
}

}  // namespace labelshift

#endif  // LABELSHIFT_DATA_HPP
