#include "sapc/apc.hpp"

#include <stdexcept>

namespace sapc {

namespace {

// Integrated curvature: the sequence with v_0 = v_1 = 0 whose second
// differences are all zero except a unit at position `pos` (0-based, >= 2).
double ramp(int index, int pos) { return index >= pos ? index - pos + 1.0 : 0.0; }

Eigen::VectorXd integrate_curvature(const Eigen::VectorXd& curv) {
  const Eigen::Index n = curv.size() + 2;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  for (Eigen::Index m = 2; m < n; ++m) v(m) = 2.0 * v(m - 1) - v(m - 2) + curv(m - 2);
  return v;
}

Eigen::Matrix3d plane_basis(const std::array<std::pair<int, int>, 3>& cells) {
  Eigen::Matrix3d p;
  for (int m = 0; m < 3; ++m) p.row(m) << 1.0, cells[m].first, cells[m].second;
  return p;
}

// Maps three-point baseline coordinates to the point-plus-two-slopes form.
Eigen::Matrix3d slopes_to_points() {
  Eigen::Matrix3d t;
  t << 1, 0, 0,
       1, 1, 0,
       1, 0, 1;
  return t;
}

}  // namespace

GridSpec::GridSpec(int ages, int periods, int interval_width)
    : ages_(ages), periods_(periods), width_(interval_width) {
  if (ages < 3 || periods < 3)
    throw std::invalid_argument("GridSpec: need at least 3 ages and 3 periods");
  if (interval_width <= 0) throw std::invalid_argument("GridSpec: interval width must be positive");
}

int GridSpec::cell(int i, int j) const {
  if (i < 1 || i > ages_ || j < 1 || j > periods_) throw std::out_of_range("GridSpec::cell: index out of range");
  return (j - 1) * ages_ + (i - 1);
}

ApcEffects ApcEffects::zeros(const GridSpec& grid) {
  return {0.0, Eigen::VectorXd::Zero(grid.ages()), Eigen::VectorXd::Zero(grid.periods()),
          Eigen::VectorXd::Zero(grid.cohorts())};
}

GridSpec ApcEffects::grid() const {
  GridSpec g(static_cast<int>(age.size()), static_cast<int>(period.size()));
  if (cohort.size() != g.cohorts())
    throw std::invalid_argument("ApcEffects: cohort length must be A + T - 1");
  return g;
}

Eigen::VectorXd CanonicalParams::stacked() const {
  Eigen::VectorXd out(3 + curv_age.size() + curv_period.size() + curv_cohort.size());
  out << baseline, curv_age, curv_period, curv_cohort;
  return out;
}

CanonicalParams CanonicalParams::from_stacked(const GridSpec& grid, const Eigen::VectorXd& xi) {
  if (xi.size() != grid.canonical_size())
    throw std::invalid_argument("CanonicalParams: length must be 2(A+T) - 4");
  const int a = grid.ages() - 2, t = grid.periods() - 2, k = grid.cohorts() - 2;
  CanonicalParams out;
  out.baseline = xi.head<3>();
  out.curv_age = xi.segment(3, a);
  out.curv_period = xi.segment(3 + a, t);
  out.curv_cohort = xi.segment(3 + a + t, k);
  return out;
}

int cohort_index(int i, int j, int ages, int periods) {
  if (i < 1 || i > ages || j < 1 || j > periods) throw std::out_of_range("cohort_index: index out of range");
  return ages - i + j;
}

int cohort_index(int i, int j, int ages) {
  if (i < 1 || i > ages || j < 1) throw std::out_of_range("cohort_index: index out of range");
  return ages - i + j;
}

Eigen::MatrixXd log_rates(const ApcEffects& effects, const GridSpec& grid) {
  if (effects.age.size() != grid.ages() || effects.period.size() != grid.periods() ||
      effects.cohort.size() != grid.cohorts())
    throw std::invalid_argument("log_rates: effect lengths do not match the grid");
  const int a = grid.ages();
  Eigen::MatrixXd mu(a, grid.periods());
  for (int j = 0; j < grid.periods(); ++j)
    for (int i = 0; i < a; ++i)
      mu(i, j) = effects.level + effects.age(i) + effects.period(j) + effects.cohort(a - 1 - i + j);
  return mu;
}

ApcEffects apply_group(const ApcEffects& effects, const GroupElement& g) {
  const auto a = static_cast<double>(effects.age.size());
  ApcEffects out = effects;
  out.level = effects.level - g.a - g.b - g.c - (a - 1.0) * g.d;
  for (Eigen::Index i = 0; i < out.age.size(); ++i) out.age(i) += g.a + static_cast<double>(i) * g.d;
  for (Eigen::Index j = 0; j < out.period.size(); ++j) out.period(j) += g.b - static_cast<double>(j) * g.d;
  for (Eigen::Index k = 0; k < out.cohort.size(); ++k) out.cohort(k) += g.c + static_cast<double>(k) * g.d;
  return out;
}

Eigen::VectorXd second_differences(const Eigen::VectorXd& v) {
  if (v.size() < 3) throw std::invalid_argument("second_differences: need at least 3 entries");
  const Eigen::Index n = v.size() - 2;
  return v.tail(n) - 2.0 * v.segment(1, n) + v.head(n);
}

int middle_index(int ages) {
  if (ages < 1 || ages % 2 == 0)
    throw std::invalid_argument("middle_index: A must be odd; pass an explicit BaselineSpec for even A");
  return (ages + 1) / 2;
}

BaselineSpec default_baseline(const GridSpec& grid, BaselineForm form) {
  BaselineSpec spec;
  spec.form = form;
  const int a = grid.ages();
  if (a % 2 == 1) {
    const int u = middle_index(a);
    spec.coordinates = BaselineCoordinates::age_cohort;
    spec.triple = {{{u, u}, {u + 1, u}, {u, u + 1}}};
  } else {
    spec.coordinates = BaselineCoordinates::age_period;
    spec.triple = {{{a, 1}, {a - 1, 1}, {a, 2}}};
  }
  return spec;
}

std::array<std::pair<int, int>, 3> baseline_cells(const GridSpec& grid, const BaselineSpec& spec) {
  std::array<std::pair<int, int>, 3> cells{};
  for (int m = 0; m < 3; ++m) {
    auto [i, second] = spec.triple[m];
    const int j = spec.coordinates == BaselineCoordinates::age_cohort ? second - grid.ages() + i : second;
    if (i < 1 || i > grid.ages() || j < 1 || j > grid.periods())
      throw std::invalid_argument("BaselineSpec: baseline cell " + std::to_string(m + 1) + " lies outside the grid");
    cells[m] = {i, j};
  }
  // Collinearity is invariant under the affine change between coordinate systems.
  const Eigen::Matrix3d p = plane_basis(cells);
  if (std::abs(p.determinant()) < 0.5)
    throw std::invalid_argument("BaselineSpec: baseline cells are collinear and do not define a triangle");
  return cells;
}

Eigen::MatrixXd build_design_matrix(const GridSpec& grid, const BaselineSpec& spec) {
  const auto cells = baseline_cells(grid, spec);
  const int a = grid.ages(), t = grid.periods();
  const int na = a - 2, nt = t - 2, nk = grid.cohorts() - 2;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(grid.cells(), grid.canonical_size());

  // Curvature columns before removing the plane through the baseline cells.
  auto raw_curvature = [&](int i, int j, int col) {
    // i, j 0-based
    const int k = a - 1 - i + j;
    if (col < na) return ramp(i, col + 2);
    if (col < na + nt) return ramp(j, col - na + 2);
    return ramp(k, col - na - nt + 2);
  };

  const Eigen::Matrix3d p_inv = plane_basis(cells).inverse();
  Eigen::Matrix3d base_transform = p_inv;
  if (spec.form == BaselineForm::point_two_slopes) base_transform = p_inv * slopes_to_points();

  for (int j = 0; j < t; ++j) {
    for (int i = 0; i < a; ++i) {
      const int row = j * a + i;
      const Eigen::RowVector3d plane(1.0, i + 1.0, j + 1.0);
      const Eigen::RowVector3d weights = plane * p_inv;
      m.row(row).head<3>() = plane * base_transform;
      for (int col = 0; col < na + nt + nk; ++col) {
        double anchor = 0.0;
        for (int b = 0; b < 3; ++b)
          anchor += weights(b) * raw_curvature(cells[b].first - 1, cells[b].second - 1, col);
        m(row, 3 + col) = raw_curvature(i, j, col) - anchor;
      }
    }
  }
  return m;
}

CanonicalParams canonical_from_effects(const ApcEffects& effects, const BaselineSpec& spec) {
  const GridSpec grid = effects.grid();
  const auto cells = baseline_cells(grid, spec);
  const Eigen::MatrixXd mu = log_rates(effects, grid);
  Eigen::Vector3d points;
  for (int m = 0; m < 3; ++m) points(m) = mu(cells[m].first - 1, cells[m].second - 1);

  CanonicalParams out;
  out.baseline = points;
  if (spec.form == BaselineForm::point_two_slopes)
    out.baseline << points(0), points(1) - points(0), points(2) - points(0);
  out.curv_age = second_differences(effects.age);
  out.curv_period = second_differences(effects.period);
  out.curv_cohort = second_differences(effects.cohort);
  return out;
}

ApcEffects effects_from_canonical(const GridSpec& grid, const BaselineSpec& spec, const Eigen::VectorXd& xi) {
  const auto cells = baseline_cells(grid, spec);
  const CanonicalParams params = CanonicalParams::from_stacked(grid, xi);
  ApcEffects fx;
  fx.age = integrate_curvature(params.curv_age);
  fx.period = integrate_curvature(params.curv_period);
  fx.cohort = integrate_curvature(params.curv_cohort);
  fx.level = 0.0;

  Eigen::Vector3d points = params.baseline;
  if (spec.form == BaselineForm::point_two_slopes) points = slopes_to_points() * params.baseline;
  const Eigen::MatrixXd partial = log_rates(fx, grid);
  Eigen::Vector3d residual;
  for (int m = 0; m < 3; ++m) residual(m) = points(m) - partial(cells[m].first - 1, cells[m].second - 1);
  // Plane x0 + x1 * i + x2 * j through the residuals; rewritten with
  // i = A + j - k so the age effects carry no linear part.
  const Eigen::Vector3d x = plane_basis(cells).partialPivLu().solve(residual);
  const int a = grid.ages();
  fx.level = x(0) + x(1) * a;
  for (Eigen::Index j = 0; j < fx.period.size(); ++j) fx.period(j) += (x(1) + x(2)) * static_cast<double>(j + 1);
  for (Eigen::Index k = 0; k < fx.cohort.size(); ++k) fx.cohort(k) -= x(1) * static_cast<double>(k + 1);
  return fx;
}

std::string to_string(BaselineCoordinates c) {
  return c == BaselineCoordinates::age_cohort ? "age-cohort" : "age-period";
}

std::string to_string(BaselineForm f) {
  return f == BaselineForm::three_points ? "three-points" : "point-two-slopes";
}

}  // namespace sapc
