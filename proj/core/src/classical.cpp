#include "stainkit/classical.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <string>

#include "stainkit/diagnostics.hpp"
#include "stainkit/lab.hpp"

namespace stainkit {
namespace {

constexpr double kPi = 3.14159265358979323846;

double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 unit_nonnegative(Vec3 v) {
  for (auto& x : v) x = std::max(x, 0.0);
  const double n = norm(v);
  if (!(n > 0.0)) throw Error("stain vector has no positive component");
  for (auto& x : v) x /= n;
  return v;
}

// Linear-interpolated percentile (numpy's default) of an unsorted sample.
double percentile(std::vector<double> values, double pct) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

// OD pixels whose largest channel reaches the transparency threshold.
std::vector<Vec3> tissue_pixels(const OdImage& od, double threshold) {
  std::vector<Vec3> out;
  out.reserve(od.pixel_count());
  for (std::size_t i = 0; i < od.pixel_count(); ++i) {
    const Vec3 v{od.values[i * 3], od.values[i * 3 + 1], od.values[i * 3 + 2]};
    if (std::max({v[0], v[1], v[2]}) >= threshold) out.push_back(v);
  }
  return out;
}

// Exact minimizer of ‖v − W·h‖² + λ(h₀ + h₁) over h ≥ 0 for a 3×2 W, given
// gram = WᵀW and rhs = Wᵀv. Enumerates the four active sets.
std::array<double, 2> nnls2(const std::array<double, 4>& gram, const std::array<double, 2>& rhs, double lambda) {
  const double g00 = gram[0], g01 = gram[1], g11 = gram[3];
  const double r0 = rhs[0] - 0.5 * lambda, r1 = rhs[1] - 0.5 * lambda;
  auto cost = [&](double h0, double h1) {
    return g00 * h0 * h0 + 2.0 * g01 * h0 * h1 + g11 * h1 * h1 - 2.0 * (r0 * h0 + r1 * h1);
  };
  std::array<double, 2> best{0.0, 0.0};
  double best_cost = 0.0;
  const double det = g00 * g11 - g01 * g01;
  if (det > 0.0) {
    const double h0 = (g11 * r0 - g01 * r1) / det;
    const double h1 = (g00 * r1 - g01 * r0) / det;
    if (h0 >= 0.0 && h1 >= 0.0) return {h0, h1};  // interior optimum of a convex problem
  }
  if (g00 > 0.0 && r0 > 0.0) {
    const double h0 = r0 / g00;
    const double c = cost(h0, 0.0);
    if (c < best_cost) {
      best_cost = c;
      best = {h0, 0.0};
    }
  }
  if (g11 > 0.0 && r1 > 0.0) {
    const double h1 = r1 / g11;
    const double c = cost(0.0, h1);
    if (c < best_cost) {
      best_cost = c;
      best = {0.0, h1};
    }
  }
  return best;
}

struct Dictionary {
  Vec3 w0, w1;

  std::array<double, 4> gram() const {
    const double g01 = dot(w0, w1);
    return {dot(w0, w0), g01, g01, dot(w1, w1)};
  }
};

void solve_codes(const std::vector<Vec3>& data, const Dictionary& dict, double lambda,
                 std::vector<std::array<double, 2>>& codes) {
  const auto gram = dict.gram();
  codes.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) codes[i] = nnls2(gram, {dot(dict.w0, data[i]), dot(dict.w1, data[i])}, lambda);
}

double objective(const std::vector<Vec3>& data, const Dictionary& dict,
                 const std::vector<std::array<double, 2>>& codes, double lambda) {
  double fit = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& h = codes[i];
    for (int c = 0; c < 3; ++c) {
      const double r = data[i][c] - dict.w0[c] * h[0] - dict.w1[c] * h[1];
      fit += r * r;
    }
    l1 += h[0] + h[1];
  }
  return fit + lambda * l1;
}

// Block-coordinate update of each atom under w ≥ 0, ‖w‖ ≤ 1. Each column
// step is the exact constrained minimizer since the column's Hessian is a
// multiple of the identity.
void update_dictionary(const std::vector<Vec3>& data, const std::vector<std::array<double, 2>>& codes, Dictionary& dict) {
  double a00 = 0.0, a01 = 0.0, a11 = 0.0;
  Vec3 b0{}, b1{};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& h = codes[i];
    a00 += h[0] * h[0];
    a01 += h[0] * h[1];
    a11 += h[1] * h[1];
    for (int c = 0; c < 3; ++c) {
      b0[c] += data[i][c] * h[0];
      b1[c] += data[i][c] * h[1];
    }
  }
  auto project = [](Vec3 w) {
    for (auto& x : w) x = std::max(x, 0.0);
    const double n = norm(w);
    if (n > 1.0)
      for (auto& x : w) x /= n;
    return w;
  };
  for (int sweep = 0; sweep < 3; ++sweep) {
    if (a00 > 0.0) {
      Vec3 w;
      for (int c = 0; c < 3; ++c) w[c] = (b0[c] - dict.w1[c] * a01) / a00;
      dict.w0 = project(w);
    }
    if (a11 > 0.0) {
      Vec3 w;
      for (int c = 0; c < 3; ++c) w[c] = (b1[c] - dict.w0[c] * a01) / a11;
      dict.w1 = project(w);
    }
  }
}

// Rescales atoms to unit norm, shrinking the matching code rows so W·H is unchanged.
void renormalize(Dictionary& dict, const Dictionary& previous, std::vector<std::array<double, 2>>& codes) {
  Vec3* atoms[2] = {&dict.w0, &dict.w1};
  const Vec3* old_atoms[2] = {&previous.w0, &previous.w1};
  for (int k = 0; k < 2; ++k) {
    const double n = norm(*atoms[k]);
    if (n < 1e-12) {
      *atoms[k] = *old_atoms[k];
      for (auto& h : codes) h[k] = 0.0;
      continue;
    }
    for (auto& x : *atoms[k]) x /= n;
    for (auto& h : codes) h[k] *= n;
  }
}

}  // namespace

// --- StainMatrix -------------------------------------------------------------

StainMatrix::StainMatrix(const Vec3& a, const Vec3& b) {
  Vec3 ua = unit_nonnegative(a), ub = unit_nonnegative(b);
  if (ub[2] > ua[2]) std::swap(ua, ub);
  columns_ = {ua, ub};
}

double angle_degrees(const Vec3& a, const Vec3& b) {
  const double c = dot(a, b) / (norm(a) * norm(b));
  return std::acos(std::clamp(c, -1.0, 1.0)) * 180.0 / kPi;
}

void write_stain_matrix(std::ostream& out, const StainMatrix& stains) {
  out << std::fixed << std::setprecision(6);
  for (int r = 0; r < 3; ++r) out << stains.column(0)[r] << ' ' << stains.column(1)[r] << '\n';
}

StainMatrix read_stain_matrix(std::istream& in) {
  Vec3 h{}, e{};
  for (int r = 0; r < 3; ++r) {
    if (!(in >> h[r] >> e[r])) throw Error("stain matrix text: expected 6 numbers");
  }
  return StainMatrix(h, e);
}

// --- Reinhard ----------------------------------------------------------------

LabStats compute_lab_stats(const RgbImage& image) {
  if (image.empty()) throw Error("LAB statistics of an empty image");
  std::array<double, 3> sum{}, sum_sq{};
  const auto px = image.pixels();
  const std::size_t n = image.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    const Lab lab = srgb_to_lab(px[i * 3], px[i * 3 + 1], px[i * 3 + 2]);
    for (int c = 0; c < 3; ++c) {
      sum[c] += lab[c];
      sum_sq[c] += lab[c] * lab[c];
    }
  }
  LabStats stats;
  for (int c = 0; c < 3; ++c) {
    stats.mean[c] = sum[c] / static_cast<double>(n);
    const double var = std::max(0.0, sum_sq[c] / static_cast<double>(n) - stats.mean[c] * stats.mean[c]);
    stats.stddev[c] = std::max(std::sqrt(var), 1e-6);
  }
  return stats;
}

RgbImage reinhard_normalize(const RgbImage& source, const LabStats& target) {
  const LabStats src = compute_lab_stats(source);
  std::array<double, 3> gain{};
  for (int c = 0; c < 3; ++c) {
    if (src.stddev[c] <= 1e-6) {
      gain[c] = 1.0;
      warn("reinhard: source LAB channel " + std::to_string(c) + " has zero variance; using unit scale");
    } else {
      gain[c] = target.stddev[c] / src.stddev[c];
    }
  }
  RgbImage out(source.width(), source.height());
  const auto in = source.pixels();
  auto dst = out.mutable_pixels();
  for (std::size_t i = 0; i < source.pixel_count(); ++i) {
    Lab lab = srgb_to_lab(in[i * 3], in[i * 3 + 1], in[i * 3 + 2]);
    for (int c = 0; c < 3; ++c) lab[c] = (lab[c] - src.mean[c]) * gain[c] + target.mean[c];
    const auto rgb = lab_to_srgb(lab);
    std::copy(rgb.begin(), rgb.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * 3));
  }
  return out;
}

// --- Macenko -----------------------------------------------------------------

StainMatrix macenko_estimate_stains(const OdImage& od, const MacenkoOptions& options) {
  const auto pixels = tissue_pixels(od, options.od_threshold);
  if (pixels.size() < 2) {
    throw InsufficientTissueError("insufficient tissue: " + std::to_string(pixels.size()) +
                                  " pixels above OD threshold");
  }
  Eigen::Vector3d mu = Eigen::Vector3d::Zero();
  for (const auto& p : pixels) mu += Eigen::Vector3d(p[0], p[1], p[2]);
  mu /= static_cast<double>(pixels.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : pixels) {
    const Eigen::Vector3d d = Eigen::Vector3d(p[0], p[1], p[2]) - mu;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(pixels.size() - 1);

  // Eigenvalues ascend; the top two eigenvectors span the stain plane.
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  Eigen::Vector3d e0 = eig.eigenvectors().col(2);
  Eigen::Vector3d e1 = eig.eigenvectors().col(1);
  if (e0[0] < 0.0) e0 = -e0;
  if (e1[0] < 0.0) e1 = -e1;

  std::vector<double> phi(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const Eigen::Vector3d v(pixels[i][0], pixels[i][1], pixels[i][2]);
    phi[i] = std::atan2(v.dot(e1), v.dot(e0));
  }
  const double lo = percentile(phi, options.angle_percentile);
  const double hi = percentile(phi, 100.0 - options.angle_percentile);
  const Eigen::Vector3d v1 = e0 * std::cos(lo) + e1 * std::sin(lo);
  const Eigen::Vector3d v2 = e0 * std::cos(hi) + e1 * std::sin(hi);
  // A flipped plane basis can leave both vectors pointing into negative OD.
  auto oriented = [](const Eigen::Vector3d& v) { return v.sum() < 0.0 ? Vec3{-v[0], -v[1], -v[2]} : Vec3{v[0], v[1], v[2]}; };
  const StainMatrix stains(oriented(v1), oriented(v2));
  if (angle_degrees(stains.column(0), stains.column(1)) < 10.0) {
    warn("macenko: recovered stain vectors are nearly parallel; the tile may contain a single stain");
  }
  return stains;
}

// --- Vahadane ----------------------------------------------------------------

VahadaneResult vahadane_factorize(const OdImage& od, const VahadaneOptions& options) {
  const auto data = tissue_pixels(od, options.od_threshold);
  if (data.size() < 2) {
    throw InsufficientTissueError("insufficient tissue: " + std::to_string(data.size()) +
                                  " pixels above OD threshold");
  }
  StainMatrix init = options.initial ? *options.initial : [&] {
    MacenkoOptions mo;
    mo.od_threshold = options.od_threshold;
    return macenko_estimate_stains(od, mo);
  }();
  Dictionary dict{init.column(0), init.column(1)};

  VahadaneResult result{init, {}, 0.0, false};
  for (const auto& v : data) result.data_norm_sq += dot(v, v);

  std::vector<std::array<double, 2>> codes;
  solve_codes(data, dict, options.lambda, codes);
  result.objective.push_back(objective(data, dict, codes, options.lambda));

  for (int it = 0; it < options.max_iterations; ++it) {
    const Dictionary previous = dict;
    update_dictionary(data, codes, dict);
    renormalize(dict, previous, codes);
    solve_codes(data, dict, options.lambda, codes);
    const double j = objective(data, dict, codes, options.lambda);
    const double prev = result.objective.back();
    result.objective.push_back(j);
    if (prev - j <= options.tolerance * std::max(prev, 1e-300)) {
      result.converged = true;
      break;
    }
  }
  if (!result.converged) {
    warn("vahadane: iteration budget exhausted before convergence; returning the last iterate");
  }
  result.stains = StainMatrix(dict.w0, dict.w1);
  return result;
}

StainMatrix vahadane_estimate_stains(const OdImage& od, double lambda_sparsity) {
  VahadaneOptions options;
  options.lambda = lambda_sparsity;
  return vahadane_factorize(od, options).stains;
}

// --- Concentrations and recombination ----------------------------------------

ConcentrationMap compute_concentrations(const OdImage& od, const StainMatrix& stains) {
  if (angle_degrees(stains.column(0), stains.column(1)) <= 1.0) {
    throw Error("stain vectors are within 1 degree of parallel; concentrations are not identifiable");
  }
  const Dictionary dict{stains.column(0), stains.column(1)};
  const auto gram = dict.gram();
  ConcentrationMap conc{od.width, od.height, std::vector<float>(od.pixel_count() * 2)};
  for (std::size_t i = 0; i < od.pixel_count(); ++i) {
    const Vec3 v{od.values[i * 3], od.values[i * 3 + 1], od.values[i * 3 + 2]};
    const auto h = nnls2(gram, {dot(dict.w0, v), dot(dict.w1, v)}, 0.0);
    conc.values[i * 2] = static_cast<float>(h[0]);
    conc.values[i * 2 + 1] = static_cast<float>(h[1]);
  }
  return conc;
}

std::array<double, 2> concentration_percentiles(const ConcentrationMap& conc, double pct) {
  std::array<double, 2> out{};
  for (int k = 0; k < 2; ++k) {
    std::vector<double> v(conc.pixel_count());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = conc.values[i * 2 + k];
    out[k] = percentile(std::move(v), pct);
  }
  return out;
}

std::array<double, 2> percentile_ratio(const std::array<double, 2>& source, const std::array<double, 2>& target) {
  std::array<double, 2> ratio{};
  for (int k = 0; k < 2; ++k) {
    if (source[k] <= 0.0) {
      warn("recombine: source stain " + std::to_string(k) + " has a zero 99th percentile; using scale 1");
      ratio[k] = 1.0;
    } else {
      ratio[k] = target[k] / source[k];
    }
  }
  return ratio;
}

RgbImage recombine(const ConcentrationMap& conc, const StainMatrix& target_stains, const std::array<double, 2>& scale) {
  if (conc.values.size() != conc.pixel_count() * 2) throw Error("recombine: concentration buffer does not match extents");
  OdImage od{conc.width, conc.height, std::vector<float>(conc.pixel_count() * 3)};
  const auto& h = target_stains.column(0);
  const auto& e = target_stains.column(1);
  for (std::size_t i = 0; i < conc.pixel_count(); ++i) {
    const double c0 = conc.values[i * 2] * scale[0], c1 = conc.values[i * 2 + 1] * scale[1];
    for (int c = 0; c < 3; ++c) od.values[i * 3 + c] = static_cast<float>(h[c] * c0 + e[c] * c1);
  }
  return od_to_rgb(od);
}

// --- Method dispatch ----------------------------------------------------------

std::optional<ClassicalMethod> parse_classical_method(std::string_view name) {
  if (name == "reinhard") return ClassicalMethod::kReinhard;
  if (name == "macenko") return ClassicalMethod::kMacenko;
  if (name == "vahadane") return ClassicalMethod::kVahadane;
  return std::nullopt;
}

std::string_view method_name(ClassicalMethod method) {
  switch (method) {
    case ClassicalMethod::kReinhard: return "reinhard";
    case ClassicalMethod::kMacenko: return "macenko";
    case ClassicalMethod::kVahadane: return "vahadane";
  }
  return "unknown";
}

namespace {

StainMatrix estimate(ClassicalMethod method, const OdImage& od) {
  return method == ClassicalMethod::kMacenko ? macenko_estimate_stains(od) : vahadane_estimate_stains(od);
}

}  // namespace

ClassicalTarget fit_classical_target(ClassicalMethod method, const RgbImage& target) {
  ClassicalTarget fitted{method, {}, std::nullopt, {}};
  if (method == ClassicalMethod::kReinhard) {
    fitted.lab = compute_lab_stats(target);
    return fitted;
  }
  const OdImage od = rgb_to_od(target);
  fitted.stains = estimate(method, od);
  fitted.max_concentration = concentration_percentiles(compute_concentrations(od, *fitted.stains));
  return fitted;
}

RgbImage apply_classical(const ClassicalTarget& target, const RgbImage& source) {
  if (target.method == ClassicalMethod::kReinhard) return reinhard_normalize(source, target.lab);
  const OdImage od = rgb_to_od(source);
  const StainMatrix stains = estimate(target.method, od);
  const ConcentrationMap conc = compute_concentrations(od, stains);
  const auto ratio = percentile_ratio(concentration_percentiles(conc), target.max_concentration);
  return recombine(conc, *target.stains, ratio);
}

RgbImage normalize_classical(ClassicalMethod method, const RgbImage& source, const RgbImage& target) {
  return apply_classical(fit_classical_target(method, target), source);
}

}  // namespace stainkit
