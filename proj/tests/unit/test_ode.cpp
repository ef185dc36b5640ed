#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "sfm/error.hpp"
#include "sfm/ode/solver.hpp"
#include "sfm/ode/tableau.hpp"
#include "test_support.hpp"

namespace sfm::ode {
namespace {

auto decay = [](double, std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = -x[i];
};
auto growth = [](double, std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i];
};

double solve1(const SolverSpec& spec, auto&& field, double x0) {
  return solve<double>(spec, field, std::vector<double>{x0})[0];
}

TEST(Tableau, LearnedTableausPassValidation) {
  for (const char* name : {"se", "dereverb", "codec", "bwe", "pr", "mel"}) {
    const auto& t = builtin_tableau(name);
    const auto rep = validate_tableau(t, 2e-3);
    std::ostringstream os;
    print_report(os, t, rep);
    EXPECT_TRUE(rep.ok()) << os.str();
    EXPECT_EQ(t.stages(), std::string(name) == "se" ? 4 : 5);
  }
}

TEST(Tableau, SeConstants) {
  const auto& t = builtin_tableau("se");
  EXPECT_NEAR(t.a.row(3).sum(), 0.850, 1e-12);
  EXPECT_NEAR(t.b.sum(), 0.999, 1e-12);
  EXPECT_EQ(t.c(1), 0.458);
  EXPECT_EQ(t.c(2), 0.776);
  const auto& mel = builtin_tableau("mel");
  EXPECT_EQ(mel.b(0), 0.134);
  EXPECT_EQ(mel.b(2), 0.307);
}

TEST(Tableau, ConstructedViolationsReported) {
  auto t = builtin_tableau("se");
  t.b << 0.0, 1.0, 0.0, 0.0;
  const auto rep = validate_tableau(t);
  int range = 0;
  for (const auto& v : rep.violations)
    if (v.kind == ConstraintKind::WeightRange) {
      ++range;
      EXPECT_TRUE(v.learned_only);
      EXPECT_NEAR(v.magnitude, 0.05, 1e-12);
    }
  EXPECT_EQ(range, 3);
  t = builtin_tableau("se");
  t.a(0, 1) = 0.2;
  t.c(0) = 0.1;
  const auto rep2 = validate_tableau(t);
  EXPECT_FALSE(rep2.ok_structural());
}

TEST(Tableau, Kutta38IsStructurallyExact) {
  const auto rep = validate_tableau(kutta38(), 1e-12);
  EXPECT_TRUE(rep.ok_structural());
  ASSERT_FALSE(rep.ok());
  for (const auto& v : rep.violations) {
    EXPECT_TRUE(v.learned_only);
    EXPECT_EQ(v.kind, ConstraintKind::NodeCap);
  }
}

TEST(Tableau, RalstonCompositionsAreConsistent) {
  EXPECT_TRUE(validate_tableau(ralston2(), 1e-12).ok_structural());
  EXPECT_TRUE(validate_tableau(ralston3(), 1e-12).ok_structural());
  EXPECT_TRUE(validate_tableau(ralston23_merged(), 1e-12).ok_structural());
}

TEST(Tableau, TextRoundTrip) {
  const auto& t = builtin_tableau("codec");
  std::stringstream ss;
  write_tableau(ss, t);
  const auto back = parse_tableau(ss, "codec");
  EXPECT_EQ(back.a, t.a);
  EXPECT_EQ(back.b, t.b);
  EXPECT_EQ(back.c, t.c);
}

TEST(Tableau, MalformedTextRejected) {
  std::istringstream bad1("rk 2\n0 0\n1 0\n0.5 0.5\n");  // missing c
  EXPECT_THROW(parse_tableau(bad1), FormatError);
  std::istringstream bad2("euler 1\n");
  EXPECT_THROW(parse_tableau(bad2), FormatError);
  std::istringstream bad3("rk 1\n0\n1\n0\nextra\n");
  EXPECT_THROW(parse_tableau(bad3), FormatError);
  EXPECT_THROW(builtin_tableau("nope"), ConfigError);
}

TEST(Solver, ZeroFieldKeepsState) {
  auto zero = [](double, std::span<const double>, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
  for (const SolverSpec& s : {SolverSpec{Euler{3}}, SolverSpec{Midpoint{2}}, SolverSpec{SingleStepRK{builtin_tableau("bwe")}}})
    EXPECT_EQ(solve1(s, zero, 1.25), 1.25);
}

TEST(Solver, ConstantField) {
  auto k = [](double, std::span<const double>, std::span<double> out) { std::fill(out.begin(), out.end(), 3.0); };
  for (int n : {1, 2, 5, 7}) EXPECT_NEAR(solve1(Euler{n}, k, 1.0), 4.0, 1e-14);
  EXPECT_NEAR(solve1(SingleStepRK{builtin_tableau("se")}, k, 1.0), 1.0 + 3.0 * 0.999, 1e-14);
}

TEST(Solver, ClosedFormOracles) {
  EXPECT_EQ(solve1(Euler{4}, decay, 1.0), 0.31640625);
  EXPECT_EQ(solve1(Midpoint{2}, decay, 1.0), 0.390625);
  EXPECT_NEAR(solve1(SingleStepRK{kutta38()}, growth, 1.0), 65.0 / 24.0, 1e-12);
}

TEST(Solver, MidpointIntegratesLinearInTauExactly) {
  auto f = [](double tau, std::span<const double>, std::span<double> out) { out[0] = 2.0 + 6.0 * tau; };
  EXPECT_NEAR(solve1(Midpoint{1}, f, 0.0), 5.0, 1e-14);
  EXPECT_NEAR(solve1(Midpoint{3}, f, 0.0), 5.0, 1e-14);
}

TEST(Solver, ConvergenceOrders) {
  const double exact = std::exp(-1.0);
  for (int n : {8, 16, 32}) {
    const double e1 = std::abs(solve1(Euler{n}, decay, 1.0) - exact);
    const double e2 = std::abs(solve1(Euler{2 * n}, decay, 1.0) - exact);
    EXPECT_NEAR(e1 / e2, 2.0, 0.4) << n;
    const double m1 = std::abs(solve1(Midpoint{n}, decay, 1.0) - exact);
    const double m2 = std::abs(solve1(Midpoint{2 * n}, decay, 1.0) - exact);
    EXPECT_NEAR(m1 / m2, 4.0, 0.8) << n;
  }
}

TEST(Solver, NfeAccounting) {
  for (const SolverSpec& s : {SolverSpec{Euler{5}}, SolverSpec{Midpoint{3}}, SolverSpec{SingleStepRK{builtin_tableau("mel")}},
                              SolverSpec{SequentialRK{{ralston2(), ralston3()}}}}) {
    int calls = 0;
    auto counting = [&](double tau, std::span<const double> x, std::span<double> out) {
      ++calls;
      decay(tau, x, out);
    };
    int hooks = 0;
    std::vector<double> x{1.0};
    SolverWorkspace<double> ws;
    solve<double>(s, counting, std::span<double>(x), ws, {}, [&](int, std::span<double>) { ++hooks; });
    EXPECT_EQ(calls, nfe(s)) << describe(s);
    EXPECT_EQ(hooks, step_count(s)) << describe(s);
  }
  EXPECT_EQ(nfe(Midpoint{2}), 4);
  EXPECT_EQ(nfe(SingleStepRK{builtin_tableau("se")}), 4);
}

TEST(Solver, SequentialRalstonEqualsMergedTableau) {
  auto f = [](double tau, std::span<const double> x, std::span<double> out) {
    out[0] = std::sin(3 * tau) * x[0] + x[1];
    out[1] = -x[0] * x[0] + tau;
  };
  const auto seq = solve<double>(SequentialRK{{ralston2(), ralston3()}}, f, std::vector<double>{0.3, -0.7});
  const auto merged = solve<double>(SingleStepRK{ralston23_merged()}, f, std::vector<double>{0.3, -0.7});
  EXPECT_NEAR(seq[0], merged[0], 1e-14);
  EXPECT_NEAR(seq[1], merged[1], 1e-14);
}

TEST(Solver, AffineEquivariance) {
  // Linear field A x + g(tau); mapping x -> a x + d maps the field consistently.
  const double a = 1.7, d = -0.4;
  auto f = [](double tau, std::span<const double> x, std::span<double> out) {
    out[0] = -0.8 * x[0] + tau;
  };
  auto g = [&](double tau, std::span<const double> y, std::span<double> out) {
    out[0] = a * (-0.8 * ((y[0] - d) / a) + tau);
  };
  for (const SolverSpec& s : {SolverSpec{Euler{4}}, SolverSpec{Midpoint{2}}, SolverSpec{SingleStepRK{builtin_tableau("pr")}}}) {
    const double x1 = solve1(s, f, 0.9);
    const double y1 = solve1(s, g, a * 0.9 + d);
    EXPECT_NEAR(y1, a * x1 + d, 1e-13) << describe(s);
  }
}

TEST(Solver, NonFiniteOutputCarriesIndex) {
  auto bad_at = [](int when) {
    return [when, calls = 0](double, std::span<const double>, std::span<double> out) mutable {
      out[0] = (calls++ == when) ? std::numeric_limits<double>::quiet_NaN() : 1.0;
    };
  };
  try {
    solve<double>(Euler{4}, bad_at(2), std::vector<double>{0.0});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.index(), 2);
  }
  try {
    solve<double>(SingleStepRK{builtin_tableau("se")}, bad_at(3), std::vector<double>{0.0});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.index(), 3);
  }
  SolveOptions probe;
  probe.check_finite = false;
  const auto out = solve<double>(Euler{4}, bad_at(2), std::vector<double>{0.0}, probe);
  EXPECT_TRUE(std::isnan(out[0]));
}

TEST(Solver, ParseSpecs) {
  EXPECT_EQ(nfe(parse_solver("euler:4")), 4);
  EXPECT_EQ(nfe(parse_solver("midpoint:2")), 4);
  EXPECT_EQ(nfe(parse_solver("rk:mel")), 5);
  EXPECT_EQ(nfe(parse_solver("ralston2+3")), 5);
  EXPECT_THROW(parse_solver("euler:0"), ConfigError);
  EXPECT_THROW(parse_solver("euler"), ConfigError);
  EXPECT_THROW(parse_solver("heun:2"), ConfigError);
  EXPECT_THROW(parse_solver("rk:unknown"), ConfigError);
  EXPECT_THROW(validate(Euler{0}), ConfigError);
}

TEST(Solver, FloatInstantiation) {
  auto f = [](double, std::span<const float> x, std::span<float> out) { out[0] = -x[0]; };
  const auto r = solve<float>(Euler{4}, f, std::vector<float>{1.0f});
  EXPECT_EQ(r[0], 0.31640625f);
}

}  // namespace
}  // namespace sfm::ode
