#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "icp_audit/errors.hpp"
#include "icp_audit/io.hpp"
#include "icp_audit/metrics.hpp"

namespace icp::metrics {

using nlohmann::json;

std::string format_fixed(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  std::string s = buf;
  if (s == "-0.000000") s = "0.000000";
  return s;
}

namespace {

std::string target_key(double target) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", target);
  return buf;
}

bool is_scalar(const json& j) { return !j.is_object() && !j.is_array(); }

void emit(const json& j, int indent, std::string& out) {
  const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  const std::string inner(static_cast<std::size_t>(indent + 1) * 2, ' ');
  switch (j.type()) {
    case json::value_t::number_float:
      out += format_fixed(j.get<double>());
      return;
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (const auto& [k, v] : j.items()) {  // std::map storage: sorted keys
        if (!first) out += ",\n";
        first = false;
        out += inner + json(k).dump() + ": ";
        emit(v, indent + 1, out);
      }
      out += "\n" + pad + "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      if (std::all_of(j.begin(), j.end(), is_scalar)) {
        out += "[";
        for (std::size_t i = 0; i < j.size(); ++i) {
          if (i) out += ", ";
          emit(j[i], indent + 1, out);
        }
        out += "]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ",\n";
        out += inner;
        emit(j[i], indent + 1, out);
      }
      out += "\n" + pad + "]";
      return;
    }
    default:
      out += j.dump();
      return;
  }
}

json attack_to_json(const AttackReport& r) {
  json tpr = json::object();
  for (const auto& [t, v] : r.tpr_at) tpr[target_key(t)] = v;
  json curve = json::array();
  for (const auto& p : r.roc) curve.push_back(json::array({p.fpr, p.tpr}));
  return {{"auc", r.auc}, {"n_pos", r.n_pos}, {"n_neg", r.n_neg}, {"tpr_at", std::move(tpr)}, {"roc", std::move(curve)}};
}

double tpr_or_nan(const AttackReport& r, double target) {
  auto it = r.tpr_at.find(target);
  return it == r.tpr_at.end() ? std::nan("") : it->second;
}

}  // namespace

std::string report_to_json_text(const EvalReport& report) {
  json attacks = json::object();
  for (const auto& [name, r] : report.attacks) attacks[name] = attack_to_json(r);
  json root{{"attacks", std::move(attacks)}, {"metadata", report.metadata}};
  std::string out;
  emit(root, 0, out);
  out += '\n';
  return out;
}

std::string report_to_csv_text(const EvalReport& report) {
  std::string out = "attack,auc,tpr_at_0.01,tpr_at_0.05,n_pos,n_neg\n";
  for (const auto& [name, r] : report.attacks) {
    out += name + "," + format_fixed(r.auc) + "," + format_fixed(tpr_or_nan(r, 0.01)) + "," +
           format_fixed(tpr_or_nan(r, 0.05)) + "," + std::to_string(r.n_pos) + "," + std::to_string(r.n_neg) + "\n";
  }
  return out;
}

std::string roc_to_csv_text(std::span<const RocPoint> curve) {
  std::string out = "fpr,tpr\n";
  for (const auto& p : curve) out += format_fixed(p.fpr) + "," + format_fixed(p.tpr) + "\n";
  return out;
}

EvalReport report_from_json_text(const std::string& text) {
  EvalReport report;
  try {
    const auto root = json::parse(text);
    for (const auto& [name, a] : root.at("attacks").items()) {
      AttackReport r;
      r.auc = a.at("auc").get<double>();
      r.n_pos = a.at("n_pos").get<std::size_t>();
      r.n_neg = a.at("n_neg").get<std::size_t>();
      for (const auto& [k, v] : a.at("tpr_at").items()) r.tpr_at[std::stod(k)] = v.get<double>();
      for (const auto& p : a.at("roc")) r.roc.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      report.attacks.emplace(name, std::move(r));
    }
    report.metadata = root.value("metadata", json::object());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
  return report;
}

void write_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format) {
  io::write_file_atomic(path, format == ReportFormat::json ? report_to_json_text(report) : report_to_csv_text(report));
}

EvalReport read_report(const std::filesystem::path& path) { return report_from_json_text(io::read_file(path)); }

}  // namespace icp::metrics
