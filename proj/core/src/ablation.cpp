#include "hsimamba/ablation.hpp"

#include <cstdio>
#include <sstream>

#include "hsimamba/errors.hpp"
#include "hsimamba/trainer.hpp"

namespace hsimamba::train {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::vector<std::uint64_t> default_ablation_seeds(const TrainConfig& base) {
  return {base.seed, base.seed + 1, base.seed + 2};
}

AblationReport route_ablation(const TrainConfig& base, const data::HsiCube& cube, std::span<const std::uint64_t> seeds,
                              std::span<const routes::RouteId> route_ids, const AblationProgress& progress) {
  if (seeds.empty()) throw ValidationError("route ablation needs at least one seed");
  AblationReport report;
  for (routes::RouteId route : route_ids) {
    AblationRow row;
    row.route = route;
    try {
      for (std::uint64_t seed : seeds) {
        TrainConfig config = base;
        config.route = route;
        config.seed = seed;
        const TrainResult result = train(config, cube);
        const Evaluation ev = evaluate(result.checkpoint, cube);
        AblationRun run{seed, ev.metrics.overall_accuracy, ev.metrics.average_accuracy, ev.metrics.kappa};
        row.runs.push_back(run);
        if (progress) progress(route, seed, &row.runs.back());
      }
      const double n = static_cast<double>(row.runs.size());
      for (const auto& r : row.runs) {
        row.overall_accuracy += r.overall_accuracy / n;
        row.average_accuracy += r.average_accuracy / n;
        row.kappa += r.kappa / n;
      }
    } catch (const Error& e) {
      row.error = e.what();
      if (progress) progress(route, row.runs.size() < seeds.size() ? seeds[row.runs.size()] : 0, nullptr);
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string AblationReport::csv() const {
  std::ostringstream out;
  out << "route,name,seeds,oa,aa,kappa,error\n";
  for (const auto& r : rows) {
    out << static_cast<int>(r.route) << ',' << routes::route_name(r.route) << ',' << r.runs.size() << ',';
    if (r.ok()) {
      out << fmt(r.overall_accuracy) << ',' << fmt(r.average_accuracy) << ',' << fmt(r.kappa) << ',';
    } else {
      std::string msg = r.error;
      for (char& c : msg) {
        if (c == '"') c = '\'';
      }
      out << ",,,\"" << msg << '"';
    }
    out << '\n';
  }
  return out.str();
}

std::string AblationReport::table() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-5s %-26s %5s %8s %8s %8s\n", "route", "name", "seeds", "OA", "AA", "Kappa");
  out << line;
  for (const auto& r : rows) {
    const std::string name(routes::route_name(r.route));
    if (r.ok()) {
      std::snprintf(line, sizeof line, "%-5d %-26s %5zu %8s %8s %8s\n", static_cast<int>(r.route), name.c_str(),
                    r.runs.size(), fmt(r.overall_accuracy).c_str(), fmt(r.average_accuracy).c_str(),
                    fmt(r.kappa).c_str());
      out << line;
    } else {
      std::snprintf(line, sizeof line, "%-5d %-26s %5zu  failed: ", static_cast<int>(r.route), name.c_str(),
                    r.runs.size());
      out << line << r.error << '\n';
    }
  }
  return out.str();
}

}  // namespace hsimamba::train
