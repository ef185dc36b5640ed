#include "report.hpp"

#include <fstream>
#include <sstream>

namespace sfm::cli {
namespace {

std::string scalar_text(const Report::Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) {
    std::ostringstream os;
    os.precision(6);
    os << v.get<double>();
    return os.str();
  }
  return v.dump();
}

}  // namespace

void Report::emit(const OutputOptions& opt, std::ostream& out) const {
  if (!opt.report_file.empty()) {
    std::ofstream f(opt.report_file);
    if (!f) throw IoError("cannot write report '" + opt.report_file.string() + "'");
    f << j_.dump(2) << '\n';
  }
  if (opt.format == OutputFormat::Structured) {
    out << j_.dump(2) << '\n';
    return;
  }
  for (const auto& [key, v] : j_.items()) {
    if (!v.is_array()) {
      out << key << ": " << scalar_text(v) << '\n';
      continue;
    }
    if (!v.empty() && v.front().is_object()) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        out << key << '[' << i << "]:";
        for (const auto& [k, x] : v[i].items()) out << ' ' << k << '=' << scalar_text(x);
        out << '\n';
      }
      continue;
    }
    out << key << ':';
    for (const auto& x : v) out << ' ' << scalar_text(x);
    out << '\n';
  }
}

}  // namespace sfm::cli
