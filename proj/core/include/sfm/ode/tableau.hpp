#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace sfm::ode {

// Explicit Runge-Kutta coefficients {A, b, c} with r stages.
struct ButcherTableau {
  std::string name;
  Eigen::MatrixXd a;  // r x r, strictly lower triangular
  Eigen::VectorXd b;
  Eigen::VectorXd c;

  int stages() const noexcept { return static_cast<int>(b.size()); }
};

// Builds a tableau from the strictly-lower rows of A (row i has i entries).
ButcherTableau make_tableau(std::string name, const std::vector<std::vector<double>>& lower_rows,
                            const std::vector<double>& b, const std::vector<double>& c);

enum class ConstraintKind {
  Shape,           // inconsistent dimensions
  NonFinite,       // NaN or infinite coefficient
  UpperTriangle,   // a_ij != 0 for j >= i
  RowSum,          // sum_j a_ij != c_i
  WeightSum,       // sum_i b_i != 1
  FirstNode,       // c_1 != 0
  WeightRange,     // b_i outside [0.05, 1]
  NodeCap,         // c_i > 0.85
};

std::string_view constraint_name(ConstraintKind kind);

struct Violation {
  ConstraintKind kind;
  int row = -1;  // 0-based stage index, -1 when not applicable
  int col = -1;
  double magnitude = 0.0;  // amount by which the constraint is missed
  // Constraints specific to learned schemes (every call contributes, nodes stay
  // below 0.85); classical tableaus are expected to violate them.
  bool learned_only = false;
};

struct TableauReport {
  std::vector<Violation> violations;

  bool ok() const noexcept { return violations.empty(); }
  // True when only learned-scheme constraints are violated.
  bool ok_structural() const noexcept;
};

TableauReport validate_tableau(const ButcherTableau& t, double tol = 2e-3);
void print_report(std::ostream& os, const ButcherTableau& t, const TableauReport& report);

// Six learned task tableaus ("se", "dereverb", "codec", "bwe", "pr", "mel"),
// "kutta38", and "ralston23" (Ralston-2 on [0, 1/2] then Ralston-3 on [1/2, 1]
// merged into one five-stage tableau).
const std::map<std::string, ButcherTableau>& builtin_tableaus();
const ButcherTableau& builtin_tableau(std::string_view name);

ButcherTableau kutta38();
ButcherTableau ralston2();
ButcherTableau ralston3();
ButcherTableau ralston23_merged();

// Text format: "rk <r>", r rows of A, one row of b, one row of c.
ButcherTableau parse_tableau(std::istream& in, std::string name = "custom");
ButcherTableau load_tableau(const std::string& path);
void write_tableau(std::ostream& out, const ButcherTableau& t);

}  // namespace sfm::ode
