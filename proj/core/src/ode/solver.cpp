#include "sfm/ode/solver.hpp"

#include <charconv>
#include <filesystem>

namespace sfm::ode {

int nfe(const SolverSpec& spec) {
  return std::visit(
      [](const auto& s) -> int {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Euler>) return s.steps;
        else if constexpr (std::is_same_v<S, Midpoint>) return 2 * s.steps;
        else if constexpr (std::is_same_v<S, SingleStepRK>) return s.tableau.stages();
        else {
          int n = 0;
          for (const auto& t : s.steps) n += t.stages();
          return n;
        }
      },
      spec);
}

int step_count(const SolverSpec& spec) {
  return std::visit(
      [](const auto& s) -> int {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Euler> || std::is_same_v<S, Midpoint>) return s.steps;
        else if constexpr (std::is_same_v<S, SingleStepRK>) return 1;
        else return static_cast<int>(s.steps.size());
      },
      spec);
}

std::string describe(const SolverSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::string {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Euler>) return "euler:" + std::to_string(s.steps);
        else if constexpr (std::is_same_v<S, Midpoint>) return "midpoint:" + std::to_string(s.steps);
        else if constexpr (std::is_same_v<S, SingleStepRK>) return "rk:" + s.tableau.name;
        else {
          std::string out = "seq:";
          for (std::size_t i = 0; i < s.steps.size(); ++i) out += (i ? "+" : "") + s.steps[i].name;
          return out;
        }
      },
      spec);
}

void validate(const SolverSpec& spec) {
  auto check_tab = [](const ButcherTableau& t) {
    const auto rep = validate_tableau(t);
    if (!rep.ok_structural()) throw ConfigError("tableau '" + t.name + "' is not a valid explicit RK scheme");
  };
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Euler> || std::is_same_v<S, Midpoint>) {
          if (s.steps < 1) throw ConfigError("solver needs at least one step");
        } else if constexpr (std::is_same_v<S, SingleStepRK>) {
          check_tab(s.tableau);
        } else {
          if (s.steps.empty()) throw ConfigError("sequential solver needs at least one tableau");
          for (const auto& t : s.steps) check_tab(t);
        }
      },
      spec);
}

SolverSpec parse_solver(const std::string& text) {
  if (text == "ralston2+3") return SequentialRK{{ralston2(), ralston3()}};
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("solver '" + text + "': expected kind:arg");
  const std::string kind = text.substr(0, colon), arg = text.substr(colon + 1);
  auto steps = [&]() {
    int n = 0;
    const auto [p, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), n);
    if (ec != std::errc{} || p != arg.data() + arg.size() || n < 1)
      throw ConfigError("solver '" + text + "': step count must be a positive integer");
    return n;
  };
  if (kind == "euler") return Euler{steps()};
  if (kind == "midpoint") return Midpoint{steps()};
  if (kind == "rk") {
    if (builtin_tableaus().count(arg)) return SingleStepRK{builtin_tableau(arg)};
    if (std::filesystem::exists(arg)) return SingleStepRK{load_tableau(arg)};
    (void)builtin_tableau(arg);  // throws with the list of builtin names
  }
  throw ConfigError("solver '" + text + "': unknown kind '" + kind + "' (euler, midpoint, rk)");
}

}  // namespace sfm::ode
