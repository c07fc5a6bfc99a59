#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

#include "stainkit/color_stats.hpp"
#include "stainkit/image.hpp"

namespace stainkit {

using Vec3 = std::array<double, 3>;

/// Two unit-norm, nonnegative optical-density stain vectors.
///
/// Column 0 is the hematoxylin-like stain: the one with the larger blue
/// channel OD. Construction normalizes and orders the inputs.
class StainMatrix {
 public:
  StainMatrix(const Vec3& a, const Vec3& b);

  const Vec3& column(std::size_t k) const { return columns_.at(k); }
  const Vec3& hematoxylin() const { return columns_[0]; }
  const Vec3& eosin() const { return columns_[1]; }

  friend bool operator==(const StainMatrix&, const StainMatrix&) = default;

 private:
  std::array<Vec3, 2> columns_;
};

/// Angle between two vectors in degrees.
double angle_degrees(const Vec3& a, const Vec3& b);

/// Six decimal floats: three rows of "h e".
void write_stain_matrix(std::ostream& out, const StainMatrix& stains);
StainMatrix read_stain_matrix(std::istream& in);

/// Per-pixel stain amounts, 2 nonnegative floats per pixel.
struct ConcentrationMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;

  std::size_t pixel_count() const { return width * height; }
};

struct LabStats {
  std::array<double, 3> mean{};
  std::array<double, 3> stddev{};
};

LabStats compute_lab_stats(const RgbImage& image);
/// Matches each LAB channel's mean and standard deviation to `target`.
RgbImage reinhard_normalize(const RgbImage& source, const LabStats& target);

struct MacenkoOptions {
  double od_threshold = 0.15;
  double angle_percentile = 1.0;
};

/// SVD-plane stain estimation with robust extreme angles.
/// Throws InsufficientTissueError when fewer than 2 pixels pass the threshold.
StainMatrix macenko_estimate_stains(const OdImage& od, const MacenkoOptions& options = {});

struct VahadaneOptions {
  double lambda = 0.1;
  int max_iterations = 50;
  double od_threshold = 0.15;
  /// Relative objective decrease below which the iteration counts as converged.
  double tolerance = 1e-7;
  /// Starting dictionary; the Macenko estimate is used when absent.
  std::optional<StainMatrix> initial;
};

struct VahadaneResult {
  StainMatrix stains;
  /// Objective ‖V − WH‖²_F + λ‖H‖₁ after the initial solve and after every outer iteration.
  std::vector<double> objective;
  double data_norm_sq = 0.0;  // ‖V‖²_F over the tissue pixels
  bool converged = false;
};

/// Sparse nonnegative factorization V ≈ W·H with a 2-atom unit-norm dictionary.
VahadaneResult vahadane_factorize(const OdImage& od, const VahadaneOptions& options = {});
StainMatrix vahadane_estimate_stains(const OdImage& od, double lambda_sparsity = 0.1);

/// Nonnegative least squares od ≈ W·c per pixel. Throws when the stains are within 1° of parallel.
ConcentrationMap compute_concentrations(const OdImage& od, const StainMatrix& stains);
/// Percentile (linear interpolation) of each stain's concentrations.
std::array<double, 2> concentration_percentiles(const ConcentrationMap& conc, double percentile = 99.0);
/// target / source per stain; a zero source percentile yields 1 with a warning.
std::array<double, 2> percentile_ratio(const std::array<double, 2>& source, const std::array<double, 2>& target);
/// OD = target_stains · (scale ⊙ c), converted back to RGB.
RgbImage recombine(const ConcentrationMap& conc, const StainMatrix& target_stains, const std::array<double, 2>& scale);

enum class ClassicalMethod { kReinhard, kMacenko, kVahadane };

std::optional<ClassicalMethod> parse_classical_method(std::string_view name);
std::string_view method_name(ClassicalMethod method);

/// Template-derived state, computed once and applied to many tiles.
struct ClassicalTarget {
  ClassicalMethod method;
  LabStats lab;                           // Reinhard
  std::optional<StainMatrix> stains;      // Macenko / Vahadane
  std::array<double, 2> max_concentration{};
};

ClassicalTarget fit_classical_target(ClassicalMethod method, const RgbImage& target);
RgbImage apply_classical(const ClassicalTarget& target, const RgbImage& source);
RgbImage normalize_classical(ClassicalMethod method, const RgbImage& source, const RgbImage& target);

}  // namespace stainkit
