#pragma once

// Affine policies u_i = u_hat_i + sum_j U_ij xi_j and s_i = s_hat_i + sum_j S_ij xi_j
// with causal (lower-triangular) gains. Gains exist only for generator and
// storage buses against uncertain disturbance sites; under global balancing a
// single gain per responder is shared by all sites.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "ccopf/errors.hpp"
#include "ccopf/lower_triangular.hpp"

namespace ccopf {

enum class Balancing { local, global };

inline const char* to_string(Balancing b) { return b == Balancing::local ? "local" : "global"; }

inline Balancing parse_balancing(const std::string& s) {
  if (s == "local") return Balancing::local;
  if (s == "global") return Balancing::global;
  throw ArgumentError("balancing must be 'local' or 'global', got '" + s + "'");
}

struct ResponderPolicy {
  int bus = 0;
  Eigen::VectorXd nominal;              // length T
  std::vector<LowerTriangular> gains;   // one per site (local) or exactly one (global)
  bool operator==(const ResponderPolicy&) const = default;
};

struct AffinePolicySet {
  int horizon = 0;
  Balancing balancing = Balancing::local;
  std::vector<int> sites;  // uncertain disturbance buses, in germ order
  std::vector<ResponderPolicy> generators;
  std::vector<ResponderPolicy> storages;

  bool operator==(const AffinePolicySet&) const = default;

  /// Zero policy with the given structure.
  static AffinePolicySet zeros(int T, Balancing b, std::vector<int> sites, const std::vector<int>& gen_buses,
                               const std::vector<int>& storage_buses) {
    AffinePolicySet p;
    p.horizon = T;
    p.balancing = b;
    p.sites = std::move(sites);
    const std::size_t ng = b == Balancing::global ? (p.sites.empty() ? 0 : 1) : p.sites.size();
    auto make = [&](int bus) {
      return ResponderPolicy{bus, Eigen::VectorXd::Zero(T), std::vector<LowerTriangular>(ng, LowerTriangular(T))};
    };
    for (int bus : gen_buses) p.generators.push_back(make(bus));
    for (int bus : storage_buses) p.storages.push_back(make(bus));
    return p;
  }

  /// Gain of a responder against the site at position `site_pos`.
  const LowerTriangular& gain(const ResponderPolicy& r, std::size_t site_pos) const {
    return balancing == Balancing::global ? r.gains.at(0) : r.gains.at(site_pos);
  }

  int site_position(int bus) const {
    for (std::size_t j = 0; j < sites.size(); ++j)
      if (sites[j] == bus) return static_cast<int>(j);
    return -1;
  }

  const ResponderPolicy* generator(int bus) const {
    for (const auto& r : generators)
      if (r.bus == bus) return &r;
    return nullptr;
  }
  const ResponderPolicy* storage(int bus) const {
    for (const auto& r : storages)
      if (r.bus == bus) return &r;
    return nullptr;
  }

  /// Global policy rewritten with one explicit copy of the gain per site.
  AffinePolicySet expanded() const {
    AffinePolicySet p = *this;
    if (balancing == Balancing::local) return p;
    p.balancing = Balancing::local;
    for (auto* group : {&p.generators, &p.storages})
      for (auto& r : *group) {
        const LowerTriangular g = r.gains.empty() ? LowerTriangular(horizon) : r.gains.front();
        r.gains.assign(sites.size(), g);
      }
    return p;
  }

  void validate() const {
    const std::size_t ng = balancing == Balancing::global ? (sites.empty() ? 0 : 1) : sites.size();
    for (const auto* group : {&generators, &storages})
      for (const auto& r : *group) {
        if (r.nominal.size() != horizon) throw ArgumentError("policy nominal length differs from horizon");
        if (r.gains.size() != ng) throw ArgumentError("policy gain count does not match the site structure");
        for (const auto& g : r.gains)
          if (g.size() != horizon) throw ArgumentError("policy gain size differs from horizon");
      }
  }
};

// JSON: matrices are stored as packed lower triangles, row-major.
inline nlohmann::json to_json(const AffinePolicySet& p) {
  using nlohmann::json;
  auto group = [&](const std::vector<ResponderPolicy>& rs) {
    json arr = json::array();
    for (const auto& r : rs) {
      json gains = json::array();
      for (const auto& g : r.gains) gains.push_back(g.packed());
      arr.push_back({{"bus", r.bus},
                     {"nominal", std::vector<double>(r.nominal.data(), r.nominal.data() + r.nominal.size())},
                     {"gains", gains}});
    }
    return arr;
  };
  return {{"horizon", p.horizon},
          {"balancing", to_string(p.balancing)},
          {"sites", p.sites},
          {"generators", group(p.generators)},
          {"storages", group(p.storages)}};
}

inline AffinePolicySet policy_from_json(const nlohmann::json& j) {
  AffinePolicySet p;
  try {
    p.horizon = j.at("horizon").get<int>();
    p.balancing = parse_balancing(j.at("balancing").get<std::string>());
    p.sites = j.at("sites").get<std::vector<int>>();
    auto group = [&](const nlohmann::json& arr, std::vector<ResponderPolicy>& out) {
      for (const auto& e : arr) {
        ResponderPolicy r;
        r.bus = e.at("bus").get<int>();
        const auto nom = e.at("nominal").get<std::vector<double>>();
        r.nominal = Eigen::Map<const Eigen::VectorXd>(nom.data(), static_cast<Eigen::Index>(nom.size()));
        for (const auto& g : e.at("gains")) {
          LowerTriangular lt(p.horizon);
          const auto packed = g.get<std::vector<double>>();
          if (packed.size() != lt.packed().size()) throw ParseError("packed gain has wrong length");
          lt.packed() = packed;
          r.gains.push_back(std::move(lt));
        }
        out.push_back(std::move(r));
      }
    };
    group(j.at("generators"), p.generators);
    group(j.at("storages"), p.storages);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("policy JSON: ") + e.what());
  }
  p.validate();
  return p;
}

}  // namespace ccopf
