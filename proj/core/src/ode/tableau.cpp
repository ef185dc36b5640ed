#include "sfm/ode/tableau.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "sfm/error.hpp"

namespace sfm::ode {

ButcherTableau make_tableau(std::string name, const std::vector<std::vector<double>>& lower_rows,
                            const std::vector<double>& b, const std::vector<double>& c) {
  const auto r = static_cast<Eigen::Index>(b.size());
  if (static_cast<Eigen::Index>(c.size()) != r || static_cast<Eigen::Index>(lower_rows.size()) != r - 1)
    throw ConfigError("make_tableau: inconsistent stage counts for '" + name + "'");
  ButcherTableau t{std::move(name), Eigen::MatrixXd::Zero(r, r), Eigen::VectorXd(r), Eigen::VectorXd(r)};
  for (Eigen::Index i = 1; i < r; ++i) {
    const auto& row = lower_rows[static_cast<std::size_t>(i - 1)];
    if (static_cast<Eigen::Index>(row.size()) != i) throw ConfigError("make_tableau: row " + std::to_string(i) + " of A has wrong length");
    for (Eigen::Index j = 0; j < i; ++j) t.a(i, j) = row[static_cast<std::size_t>(j)];
  }
  for (Eigen::Index i = 0; i < r; ++i) {
    t.b(i) = b[static_cast<std::size_t>(i)];
    t.c(i) = c[static_cast<std::size_t>(i)];
  }
  return t;
}

std::string_view constraint_name(ConstraintKind kind) {
  switch (kind) {
    case ConstraintKind::Shape: return "shape";
    case ConstraintKind::NonFinite: return "non-finite";
    case ConstraintKind::UpperTriangle: return "A not strictly lower triangular";
    case ConstraintKind::RowSum: return "row sum of A != c";
    case ConstraintKind::WeightSum: return "sum of b != 1";
    case ConstraintKind::FirstNode: return "c_1 != 0";
    case ConstraintKind::WeightRange: return "b outside [0.05, 1]";
    case ConstraintKind::NodeCap: return "c above 0.85";
  }
  return "?";
}

bool TableauReport::ok_structural() const noexcept {
  for (const auto& v : violations)
    if (!v.learned_only) return false;
  return true;
}

TableauReport validate_tableau(const ButcherTableau& t, double tol) {
  TableauReport rep;
  const auto r = t.b.size();
  if (r == 0 || t.c.size() != r || t.a.rows() != r || t.a.cols() != r) {
    rep.violations.push_back({ConstraintKind::Shape, -1, -1, 0.0, false});
    return rep;
  }
  if (!t.a.allFinite() || !t.b.allFinite() || !t.c.allFinite()) {
    rep.violations.push_back({ConstraintKind::NonFinite, -1, -1, 0.0, false});
    return rep;
  }
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = i; j < r; ++j)
      if (t.a(i, j) != 0.0)
        rep.violations.push_back({ConstraintKind::UpperTriangle, int(i), int(j), std::abs(t.a(i, j)), false});
  for (Eigen::Index i = 0; i < r; ++i) {
    const double miss = std::abs(t.a.row(i).sum() - t.c(i));
    if (miss > tol) rep.violations.push_back({ConstraintKind::RowSum, int(i), -1, miss, false});
  }
  if (const double miss = std::abs(t.b.sum() - 1.0); miss > tol)
    rep.violations.push_back({ConstraintKind::WeightSum, -1, -1, miss, false});
  if (t.c(0) != 0.0) rep.violations.push_back({ConstraintKind::FirstNode, 0, -1, std::abs(t.c(0)), false});
  for (Eigen::Index i = 0; i < r; ++i) {
    const double bi = t.b(i);
    if (bi < 0.05) rep.violations.push_back({ConstraintKind::WeightRange, int(i), -1, 0.05 - bi, true});
    if (bi > 1.0) rep.violations.push_back({ConstraintKind::WeightRange, int(i), -1, bi - 1.0, true});
    if (t.c(i) > 0.85) rep.violations.push_back({ConstraintKind::NodeCap, int(i), -1, t.c(i) - 0.85, true});
  }
  return rep;
}

void print_report(std::ostream& os, const ButcherTableau& t, const TableauReport& report) {
  os << "tableau " << t.name << " (" << t.stages() << " stages): ";
  if (report.ok()) {
    os << "ok\n";
    return;
  }
  os << report.violations.size() << " violation(s)\n";
  for (const auto& v : report.violations) {
    os << "  " << constraint_name(v.kind);
    if (v.row >= 0) os << " row=" << v.row + 1;
    if (v.col >= 0) os << " col=" << v.col + 1;
    os << " by " << v.magnitude;
    if (v.learned_only) os << " [learned-scheme check]";
    os << '\n';
  }
}

ButcherTableau kutta38() {
  return make_tableau("kutta38", {{1.0 / 3}, {-1.0 / 3, 1.0}, {1.0, -1.0, 1.0}}, {1.0 / 8, 3.0 / 8, 3.0 / 8, 1.0 / 8},
                      {0.0, 1.0 / 3, 2.0 / 3, 1.0});
}

ButcherTableau ralston2() { return make_tableau("ralston2", {{2.0 / 3}}, {0.25, 0.75}, {0.0, 2.0 / 3}); }

ButcherTableau ralston3() {
  return make_tableau("ralston3", {{0.5}, {0.0, 0.75}}, {2.0 / 9, 1.0 / 3, 4.0 / 9}, {0.0, 0.5, 0.75});
}

ButcherTableau ralston23_merged() {
  return make_tableau("ralston23",
                      {{1.0 / 3}, {1.0 / 8, 3.0 / 8}, {1.0 / 8, 3.0 / 8, 1.0 / 4}, {1.0 / 8, 3.0 / 8, 0.0, 3.0 / 8}},
                      {1.0 / 8, 3.0 / 8, 1.0 / 9, 1.0 / 6, 2.0 / 9}, {0.0, 1.0 / 3, 0.5, 0.75, 0.875});
}

const std::map<std::string, ButcherTableau>& builtin_tableaus() {
  static const std::map<std::string, ButcherTableau> table = [] {
    std::map<std::string, ButcherTableau> m;
    auto add = [&m](ButcherTableau t) { m.emplace(t.name, std::move(t)); };
    add(make_tableau("se", {{0.458}, {-0.847, 1.623}, {2.029, -1.707, 0.528}}, {0.339, 0.444, 0.102, 0.114},
                     {0.0, 0.458, 0.776, 0.850}));
    add(make_tableau("dereverb", {{0.152}, {-0.065, 0.312}, {0.088, 0.296, 0.152}, {0.565, 0.856, 1.425, -1.997}},
                     {0.079, 0.223, 0.423, 0.184, 0.091}, {0.0, 0.152, 0.247, 0.536, 0.850}));
    add(make_tableau("codec", {{0.298}, {0.049, 0.375}, {-0.245, 1.030, -0.219}, {0.672, -0.168, -0.276, 0.622}},
                     {0.089, 0.211, 0.307, 0.100, 0.292}, {0.0, 0.298, 0.424, 0.566, 0.850}));
    add(make_tableau("bwe", {{0.112}, {-0.244, 0.535}, {-1.093, 1.840, -0.217}, {-1.587, 1.783, 0.236, 0.419}},
                     {0.085, 0.211, 0.262, 0.097, 0.344}, {0.0, 0.112, 0.291, 0.529, 0.850}));
    add(make_tableau("pr", {{0.271}, {0.216, 0.198}, {-0.029, 0.147, 0.454}, {0.072, 0.208, 0.326, 0.244}},
                     {0.128, 0.209, 0.307, 0.130, 0.227}, {0.0, 0.271, 0.413, 0.572, 0.850}));
    add(make_tableau("mel", {{0.251}, {0.104, 0.286}, {-0.005, 0.200, 0.379}, {0.091, 0.181, 0.344, 0.234}},
                     {0.134, 0.208, 0.307, 0.122, 0.229}, {0.0, 0.251, 0.390, 0.574, 0.850}));
    add(kutta38());
    add(ralston23_merged());
    return m;
  }();
  return table;
}

const ButcherTableau& builtin_tableau(std::string_view name) {
  const auto& all = builtin_tableaus();
  if (auto it = all.find(std::string(name)); it != all.end()) return it->second;
  std::string known;
  for (const auto& [k, v] : all) known += (known.empty() ? "" : ", ") + k;
  throw ConfigError("unknown tableau '" + std::string(name) + "' (builtin: " + known + ")");
}

ButcherTableau parse_tableau(std::istream& in, std::string name) {
  std::string tag;
  int r = 0;
  if (!(in >> tag >> r) || tag != "rk" || r < 1) throw FormatError("tableau: expected header 'rk <stages>'");
  ButcherTableau t{std::move(name), Eigen::MatrixXd(r, r), Eigen::VectorXd(r), Eigen::VectorXd(r)};
  auto read = [&in](double& v, const char* what) {
    if (!(in >> v)) throw FormatError(std::string("tableau: missing or malformed value in ") + what);
  };
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) read(t.a(i, j), "A");
  for (int i = 0; i < r; ++i) read(t.b(i), "b");
  for (int i = 0; i < r; ++i) read(t.c(i), "c");
  if (std::string extra; in >> extra) throw FormatError("tableau: trailing data '" + extra + "'");
  return t;
}

ButcherTableau load_tableau(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open tableau file '" + path + "'");
  return parse_tableau(in, path);
}

void write_tableau(std::ostream& out, const ButcherTableau& t) {
  const auto r = t.stages();
  out << "rk " << r << '\n' << std::setprecision(17);
  auto row = [&out](const auto& v) {
    for (Eigen::Index j = 0; j < v.size(); ++j) out << (j ? " " : "") << v(j);
    out << '\n';
  };
  for (int i = 0; i < r; ++i) row(t.a.row(i));
  row(t.b);
  row(t.c);
}

}  // namespace sfm::ode
