#pragma once

#include <cmath>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "sfm/error.hpp"
#include "sfm/ode/tableau.hpp"

namespace sfm::ode {

struct Euler {
  int steps = 1;
};
struct Midpoint {
  int steps = 1;
};
// One step over [0, 1] with the given tableau.
struct SingleStepRK {
  ButcherTableau tableau;
};
// Consecutive equal sub-intervals of [0, 1], one tableau step on each.
struct SequentialRK {
  std::vector<ButcherTableau> steps;
};

using SolverSpec = std::variant<Euler, Midpoint, SingleStepRK, SequentialRK>;

// Field evaluations per solve.
int nfe(const SolverSpec& spec);
// Number of solver steps (post-step hook invocations).
int step_count(const SolverSpec& spec);
std::string describe(const SolverSpec& spec);
void validate(const SolverSpec& spec);

// "euler:N", "midpoint:N", "rk:<builtin name or tableau file>", "ralston2+3".
SolverSpec parse_solver(const std::string& text);

struct SolveOptions {
  // Raise NumericError on the first non-finite field output. Disabled while
  // probing latency with NaNs.
  bool check_finite = true;
};

// Scratch storage sized for a state dimension and stage count; reused across
// solves so the hot path does not allocate.
template <class T>
class SolverWorkspace {
 public:
  SolverWorkspace() = default;
  SolverWorkspace(std::size_t dim, int max_stages) { reserve(dim, max_stages); }

  void reserve(std::size_t dim, int max_stages) {
    if (dim == dim_ && static_cast<int>(stages_.size()) >= max_stages) return;
    dim_ = dim;
    stages_.assign(static_cast<std::size_t>(std::max(max_stages, 2)), std::vector<T>(dim));
    probe_.assign(dim, T{});
  }
  std::size_t dim() const noexcept { return dim_; }

  std::span<T> stage(int i) noexcept { return stages_[static_cast<std::size_t>(i)]; }
  std::span<T> probe() noexcept { return probe_; }

 private:
  std::size_t dim_ = 0;
  std::vector<std::vector<T>> stages_;
  std::vector<T> probe_;
};

inline int max_stages(const SolverSpec& spec) {
  return std::visit(
      [](const auto& s) -> int {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Euler>) return 1;
        else if constexpr (std::is_same_v<S, Midpoint>) return 2;
        else if constexpr (std::is_same_v<S, SingleStepRK>) return s.tableau.stages();
        else {
          int m = 1;
          for (const auto& t : s.steps) m = std::max(m, t.stages());
          return m;
        }
      },
      spec);
}

struct NoHook {
  template <class T>
  void operator()(int, std::span<T>) const noexcept {}
};

namespace detail {

template <class T>
void require_finite(std::span<const T> v, const char* what, int index) {
  for (const T& x : v)
    if (!std::isfinite(x)) throw NumericError(std::string(what) + " produced a non-finite value at index " + std::to_string(index), index);
}

// One explicit RK step of size h from tau0, evaluating `field` r times.
template <class T, class Field>
void rk_step(const ButcherTableau& tab, double tau0, double h, Field& field, std::span<T> x, SolverWorkspace<T>& ws,
             const SolveOptions& opt) {
  const int r = tab.stages();
  const std::size_t n = x.size();
  auto probe = ws.probe();
  for (int i = 0; i < r; ++i) {
    std::copy(x.begin(), x.end(), probe.begin());
    for (int j = 0; j < i; ++j) {
      const T a = static_cast<T>(h * tab.a(i, j));
      if (a == T{}) continue;
      auto g = ws.stage(j);
      for (std::size_t k = 0; k < n; ++k) probe[k] += a * g[k];
    }
    auto gi = ws.stage(i);
    field(tau0 + h * tab.c(i), std::span<const T>(probe.data(), n), gi.first(n));
    if (opt.check_finite) require_finite<T>(gi.first(n), "RK stage", i);
  }
  for (int i = 0; i < r; ++i) {
    const T b = static_cast<T>(h * tab.b(i));
    auto g = ws.stage(i);
    for (std::size_t k = 0; k < n; ++k) x[k] += b * g[k];
  }
}

}  // namespace detail

// Integrates dx/dtau = field(tau, x) from tau = 0 to 1 in place.
// field(double tau, std::span<const T> x, std::span<T> out) is called exactly
// nfe(spec) times in a fixed sequential order; hook(step, x) runs after every
// solver step.
template <class T, class Field, class Hook = NoHook>
void solve(const SolverSpec& spec, Field&& field, std::span<T> x, SolverWorkspace<T>& ws, const SolveOptions& opt = {},
           Hook&& hook = {}) {
  ws.reserve(x.size(), max_stages(spec));
  const std::size_t n = x.size();
  if (const auto* e = std::get_if<Euler>(&spec)) {
    if (e->steps < 1) throw ConfigError("Euler needs at least one step");
    const double h = 1.0 / e->steps;
    auto g = ws.stage(0).first(n);
    for (int s = 0; s < e->steps; ++s) {
      field(s * h, std::span<const T>(x.data(), n), g);
      if (opt.check_finite) detail::require_finite<T>(g, "Euler step", s);
      const T hh = static_cast<T>(h);
      for (std::size_t k = 0; k < n; ++k) x[k] += hh * g[k];
      hook(s, x);
    }
  } else if (const auto* m = std::get_if<Midpoint>(&spec)) {
    if (m->steps < 1) throw ConfigError("Midpoint needs at least one step");
    const double h = 1.0 / m->steps;
    auto g1 = ws.stage(0).first(n);
    auto g2 = ws.stage(1).first(n);
    auto probe = ws.probe().first(n);
    const T half = static_cast<T>(h / 2), hh = static_cast<T>(h);
    for (int s = 0; s < m->steps; ++s) {
      field(s * h, std::span<const T>(x.data(), n), g1);
      if (opt.check_finite) detail::require_finite<T>(g1, "Midpoint step", s);
      for (std::size_t k = 0; k < n; ++k) probe[k] = x[k] + half * g1[k];
      field(s * h + h / 2, std::span<const T>(probe.data(), n), g2);
      if (opt.check_finite) detail::require_finite<T>(g2, "Midpoint step", s);
      for (std::size_t k = 0; k < n; ++k) x[k] += hh * g2[k];
      hook(s, x);
    }
  } else if (const auto* rk = std::get_if<SingleStepRK>(&spec)) {
    detail::rk_step(rk->tableau, 0.0, 1.0, field, x, ws, opt);
    hook(0, x);
  } else {
    const auto& seq = std::get<SequentialRK>(spec);
    if (seq.steps.empty()) throw ConfigError("SequentialRK needs at least one tableau");
    const double h = 1.0 / static_cast<double>(seq.steps.size());
    for (std::size_t s = 0; s < seq.steps.size(); ++s) {
      detail::rk_step(seq.steps[s], static_cast<double>(s) * h, h, field, x, ws, opt);
      hook(static_cast<int>(s), x);
    }
  }
}

// Convenience overload for one-off solves; allocates its own workspace.
template <class T, class Field>
std::vector<T> solve(const SolverSpec& spec, Field&& field, std::vector<T> x0, const SolveOptions& opt = {}) {
  SolverWorkspace<T> ws(x0.size(), max_stages(spec));
  solve<T>(spec, field, std::span<T>(x0), ws, opt);
  return x0;
}

}  // namespace sfm::ode
