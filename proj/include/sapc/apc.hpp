// Age-period-cohort index algebra, the identifiability group, and the
// canonical full-rank design matrix.
//
// Conventions used throughout the library:
//   * age index i = 1..A, period index j = 1..T, cohort index k = A - i + j
//     (1-based in every public signature that takes domain indices);
//   * an A x T surface is vectorized column-major by period, so cell (i, j)
//     lives at position (j - 1) * A + (i - 1);
//   * canonical parameters are stored as (3 baseline, d2 age, d2 period,
//     d2 cohort), each curvature block in ascending time order.
#pragma once

#include <Eigen/Dense>

#include <array>
#include <string>
#include <utility>

namespace sapc {

class GridSpec {
 public:
  GridSpec(int ages, int periods, int interval_width = 5);

  int ages() const { return ages_; }
  int periods() const { return periods_; }
  int cohorts() const { return ages_ + periods_ - 1; }
  int interval_width() const { return width_; }
  int cells() const { return ages_ * periods_; }
  /// Length of the identifiable parameter vector, 2(A+T) - 4.
  int canonical_size() const { return 2 * (ages_ + periods_) - 4; }

  /// 0-based position of 1-based cell (i, j) in the vectorized surface.
  int cell(int i, int j) const;

  bool operator==(const GridSpec&) const = default;

 private:
  int ages_;
  int periods_;
  int width_;
};

/// Over-parameterized effects for a single stratum. Never fit directly.
struct ApcEffects {
  double level = 0.0;
  Eigen::VectorXd age;
  Eigen::VectorXd period;
  Eigen::VectorXd cohort;

  static ApcEffects zeros(const GridSpec& grid);
  GridSpec grid() const;
};

/// (a, b, c) shift the age, period and cohort levels; d moves a linear trend
/// between the three time scales.
struct GroupElement {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double d = 0.0;

  GroupElement then(const GroupElement& next) const {
    return {a + next.a, b + next.b, c + next.c, d + next.d};
  }
};

enum class BaselineCoordinates { age_cohort, age_period };
enum class BaselineForm { three_points, point_two_slopes };

struct BaselineSpec {
  BaselineCoordinates coordinates = BaselineCoordinates::age_cohort;
  /// 1-based index pairs, (age, cohort) or (age, period) per `coordinates`.
  std::array<std::pair<int, int>, 3> triple{};
  BaselineForm form = BaselineForm::point_two_slopes;
};

struct CanonicalParams {
  Eigen::Vector3d baseline = Eigen::Vector3d::Zero();
  Eigen::VectorXd curv_age;
  Eigen::VectorXd curv_period;
  Eigen::VectorXd curv_cohort;

  Eigen::VectorXd stacked() const;
  static CanonicalParams from_stacked(const GridSpec& grid,
                                      const Eigen::VectorXd& xi);
};

/// k = A - i + j. Throws std::out_of_range outside 1..A x 1..T.
int cohort_index(int i, int j, int ages, int periods);
int cohort_index(int i, int j, int ages);

/// A x T matrix of delta + alpha_i + beta_j + gamma_k.
Eigen::MatrixXd log_rates(const ApcEffects& effects, const GridSpec& grid);

ApcEffects apply_group(const ApcEffects& effects, const GroupElement& g);

Eigen::VectorXd second_differences(const Eigen::VectorXd& v);

/// U = (A + 1) / 2. Even A has no middle row; callers must pass an explicit
/// BaselineSpec instead.
int middle_index(int ages);

/// Middle age-cohort triple {(U,U), (U+1,U), (U,U+1)} when A is odd,
/// corner triple {(A,1), (A-1,1), (A,2)} in age-period coordinates otherwise.
BaselineSpec default_baseline(const GridSpec& grid,
                              BaselineForm form = BaselineForm::point_two_slopes);

/// The three baseline cells as 1-based (age, period) pairs. Throws
/// std::invalid_argument when a cell falls outside the grid or the cells
/// are collinear.
std::array<std::pair<int, int>, 3> baseline_cells(const GridSpec& grid,
                                                  const BaselineSpec& spec);

/// (A*T) x (2(A+T)-4) matrix M with vec(log rates) = M * xi.
Eigen::MatrixXd build_design_matrix(const GridSpec& grid,
                                    const BaselineSpec& spec);

CanonicalParams canonical_from_effects(const ApcEffects& effects,
                                       const BaselineSpec& spec);

/// One member of the equivalence class of effects reproducing xi. The
/// curvature parts are anchored with their first two entries at zero and the
/// remaining plane is carried by the level, a linear period trend and a
/// linear cohort trend, leaving the age effects free of any linear part.
ApcEffects effects_from_canonical(const GridSpec& grid, const BaselineSpec& spec,
                                  const Eigen::VectorXd& xi);

std::string to_string(BaselineCoordinates c);
std::string to_string(BaselineForm f);

}  // namespace sapc
