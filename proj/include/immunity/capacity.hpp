#pragma once

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "immunity/trace_io.hpp"

namespace immunity {

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct SystemParams {
  double b_net_sw = 1500;      // Gbps into the switch
  double lambda_asic = 125;    // Mpps through the switch
  double mu_snic = 53;         // Mpps the NIC sustains
  double mu_cpu = 15385;       // MST updates/s the control plane sustains
  double B_sw_snic = 100;      // Gbps switch-to-NIC link
  double H = 21.3;             // bytes forwarded per packet (flow-log share)
  double S = 1500;             // average packet size, bytes
  double alpha = 0;            // malicious packet fraction
  double p = 0;                // MST hit rate
  double q = 0;                // OFF hit rate
  double update_rate = 0;      // MST updates/s demanded
  std::size_t batch = 3;       // flow-log entries per frame

  void validate() const {
    for (double v : {b_net_sw, lambda_asic, mu_snic, mu_cpu, B_sw_snic, H, S})
      if (!(v > 0)) throw DomainError("system rates and sizes must be > 0");
    for (double v : {alpha, p, q})
      if (!(v >= 0 && v <= 1)) throw DomainError("alpha, p and q must lie in [0, 1]");
    if (H > S) throw DomainError("H must not exceed S");
    if (update_rate < 0) throw DomainError("update rate must be >= 0");
    if (batch == 0) throw DomainError("batch must be >= 1");
  }

  // Packet rate implied by the bandwidth at the average packet size.
  SystemParams with_bandwidth(double gbps) const {
    SystemParams s = *this;
    s.b_net_sw = gbps;
    s.lambda_asic = gbps * 1e3 / (8 * S);
    return s;
  }
};

inline void check_unit(double v, const char* name) {
  if (!(v >= 0 && v <= 1)) throw DomainError(std::string(name) + " must lie in [0, 1]");
}

// Fraction of packets that reach the NIC.
inline double residual_fraction(double alpha, double p, double q) {
  check_unit(alpha, "alpha");
  check_unit(p, "p");
  check_unit(q, "q");
  return alpha * (1 - p) + (1 - alpha) * (1 - q);
}

inline double snic_load(double r, double lambda_asic) {
  check_unit(r, "r");
  return r * lambda_asic;
}

inline double link_load(double r, double H, double S, double b_net_sw) {
  check_unit(r, "r");
  if (!(H > 0) || H > S) throw DomainError("need 0 < H <= S");
  return r * (H / S) * b_net_sw;
}

// Largest residual fraction the NIC can absorb.
inline double max_residual(double mu_snic, double lambda_asic) { return std::min(1.0, mu_snic / lambda_asic); }

// Malicious fraction that makes an MST-only deployment (q = 0) leave the given load.
inline double backsolve_alpha(double p, double lambda_snic, double lambda_asic) {
  if (!(p > 0)) throw DomainError("p must be > 0 to back-solve alpha");
  const double a = (1 - lambda_snic / lambda_asic) / p;
  check_unit(a, "alpha");
  return a;
}

struct CapacityReport {
  double r = 0;
  double lambda_snic = 0;          // Mpps
  double lambda_snic_batched = 0;  // frames, Mpps
  double b_sw_snic = 0;            // Gbps
  double lambda_cpu = 0;           // updates/s
  bool snic_ok = false;
  bool link_ok = false;
  bool cpu_ok = false;
  double snic_headroom = 0;  // capacity / load; infinite when idle
  double link_headroom = 0;
  double cpu_headroom = 0;

  bool feasible() const { return snic_ok && link_ok && cpu_ok; }
};

inline double headroom(double capacity, double load) {
  return load > 0 ? capacity / load : std::numeric_limits<double>::infinity();
}

inline CapacityReport feasibility_report(const SystemParams& s) {
  s.validate();
  CapacityReport c;
  c.r = residual_fraction(s.alpha, s.p, s.q);
  c.lambda_snic = snic_load(c.r, s.lambda_asic);
  c.lambda_snic_batched = c.lambda_snic / static_cast<double>(s.batch);
  c.b_sw_snic = link_load(c.r, s.H, s.S, s.b_net_sw);
  c.lambda_cpu = s.update_rate;
  c.snic_ok = c.lambda_snic <= s.mu_snic;
  c.link_ok = c.b_sw_snic <= s.B_sw_snic;
  c.cpu_ok = c.lambda_cpu <= s.mu_cpu;
  c.snic_headroom = headroom(s.mu_snic, c.lambda_snic);
  c.link_headroom = headroom(s.B_sw_snic, c.b_sw_snic);
  c.cpu_headroom = headroom(s.mu_cpu, c.lambda_cpu);
  return c;
}

struct NamedReport {
  std::string name;
  SystemParams params;
  CapacityReport report;
};

// The MST-only, OFF-only and combined deployments at the given hit rates.
inline std::vector<NamedReport> deployment_batch(SystemParams base, double p, double q) {
  std::vector<NamedReport> out;
  for (auto [name, pp, qq] : {std::tuple{"mst_only", p, 0.0}, {"off_only", 0.0, q}, {"both", p, q}}) {
    SystemParams s = base;
    s.p = pp;
    s.q = qq;
    out.push_back({name, s, feasibility_report(s)});
  }
  return out;
}

inline constexpr std::string_view kCapacityHeader =
    "name,b_net_sw,alpha,p,q,r,lambda_asic,lambda_snic,lambda_snic_batched,b_sw_snic,lambda_cpu,snic_ok,link_ok,"
    "cpu_ok";

inline std::string capacity_row(const std::string& name, const SystemParams& s, const CapacityReport& c) {
  std::ostringstream o;
  o.precision(6);
  o << name << ',' << s.b_net_sw << ',' << s.alpha << ',' << s.p << ',' << s.q << ',' << c.r << ',' << s.lambda_asic
    << ',' << c.lambda_snic << ',' << c.lambda_snic_batched << ',' << c.b_sw_snic << ',' << c.lambda_cpu << ','
    << c.snic_ok << ',' << c.link_ok << ',' << c.cpu_ok;
  return o.str();
}

inline void print_report(std::ostream& o, const SystemParams& s, const CapacityReport& c) {
  auto yn = [](bool b) { return b ? "ok" : "OVER"; };
  o << "r                 " << c.r << "\n"
    << "lambda_snic Mpps  " << c.lambda_snic << " / " << s.mu_snic << "  " << yn(c.snic_ok) << "\n"
    << "batched frames    " << c.lambda_snic_batched << " Mpps\n"
    << "b_sw_snic Gbps    " << c.b_sw_snic << " / " << s.B_sw_snic << "  " << yn(c.link_ok) << "\n"
    << "lambda_cpu upd/s  " << c.lambda_cpu << " / " << s.mu_cpu << "  " << yn(c.cpu_ok) << "\n"
    << "verdict           " << (c.feasible() ? "feasible" : "infeasible") << "\n";
}

struct SweepPoint {
  double p, q, alpha, b_net_sw;
};

// Sweep file: header "p,q,alpha,b_net_sw" then one numeric row per point.
inline std::vector<SweepPoint> parse_sweep(std::istream& in) {
  std::string line;
  std::size_t n = 0;
  if (!std::getline(in, line)) throw FormatError(0, "empty sweep file");
  ++n;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "p,q,alpha,b_net_sw") throw FormatError(n, "expected header p,q,alpha,b_net_sw");
  std::vector<SweepPoint> out;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    SweepPoint pt{};
    double* f[] = {&pt.p, &pt.q, &pt.alpha, &pt.b_net_sw};
    for (std::size_t i = 0; i < 4; ++i) {
      std::string cell;
      if (!std::getline(ls, cell, ',')) throw FormatError(n, "expected 4 columns");
      try {
        std::size_t used = 0;
        *f[i] = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError(n, "not a number: '" + cell + "'");
      }
    }
    std::string extra;
    if (std::getline(ls, extra)) throw FormatError(n, "expected 4 columns");
    out.push_back(pt);
  }
  return out;
}

inline std::vector<std::pair<SystemParams, CapacityReport>> run_sweep(const SystemParams& base,
                                                                      const std::vector<SweepPoint>& pts) {
  std::vector<std::pair<SystemParams, CapacityReport>> out;
  for (const auto& pt : pts) {
    SystemParams s = base.with_bandwidth(pt.b_net_sw);
    s.p = pt.p;
    s.q = pt.q;
    s.alpha = pt.alpha;
    s.update_rate = base.update_rate * pt.b_net_sw / base.b_net_sw;
    out.emplace_back(s, feasibility_report(s));
  }
  return out;
}

// Control-plane load as offered bandwidth grows, with MST updates proportional to traffic.
inline std::vector<std::pair<double, CapacityReport>> update_rate_sweep(SystemParams base, double updates_per_gbps,
                                                                        std::size_t steps) {
  std::vector<std::pair<double, CapacityReport>> out;
  for (std::size_t i = 1; i <= steps; ++i) {
    const double b = base.b_net_sw * static_cast<double>(i) / static_cast<double>(steps);
    SystemParams s = base.with_bandwidth(b);
    s.update_rate = updates_per_gbps * b;
    out.emplace_back(b, feasibility_report(s));
  }
  return out;
}

}  // namespace immunity
