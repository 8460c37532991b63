#pragma once

// JSON (de)serialization for problem inputs.
//
// Perfect-tree instances:
//   { "m": 1, "L": 2, "sigma_x": [[1.0]],
//     "distortions": { "1,1": [[0.3]], "2,1": [[0.5]], "2,2": [[0.5]] } }
// General laminar families:
//   { "m": 1, "M": 3, "sigma_x": [[1.0]],
//     "constraints": [ { "subset": [1,2,3], "d": [[0.25]] }, ... ] }
// Matrices are row-major arrays of arrays.

#include "mdtree/tree.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <variant>

namespace mdtree {

inline nlohmann::json matrix_to_json(const SymMatrix& a) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < a.dim(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < a.dim(); ++c) row.push_back(a(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline SymMatrix matrix_from_json(const nlohmann::json& j,
                                  const std::string& where) {
  if (!j.is_array() || j.empty()) {
    throw error(errc::invalid_argument,
                where + ": matrix must be a non-empty array of rows");
  }
  const std::size_t n = j.size();
  Eigen::MatrixXd a(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    if (!j[r].is_array() || j[r].size() != n) {
      throw error(errc::invalid_argument,
                  where + ": row " + std::to_string(r) +
                      " must have " + std::to_string(n) + " entries");
    }
    for (std::size_t c = 0; c < n; ++c) {
      if (!j[r][c].is_number()) {
        throw error(errc::invalid_argument,
                    where + ": entry (" + std::to_string(r) + "," +
                        std::to_string(c) + ") is not a number");
      }
      a(r, c) = j[r][c].get<double>();
    }
  }
  return SymMatrix(std::move(a));
}

inline TreeIndex node_key_from_string(const std::string& key) {
  const auto comma = key.find(',');
  if (comma == std::string::npos) {
    throw error(errc::invalid_argument,
                "distortion key '" + key + "' is not of the form \"k,i\"");
  }
  try {
    const int k = std::stoi(key.substr(0, comma));
    const int i = std::stoi(key.substr(comma + 1));
    if (k < 1 || i < 1 || i > level_width(k)) {
      throw error(errc::invalid_argument,
                  "distortion key '" + key + "' is out of range");
    }
    return {k, i};
  } catch (const std::invalid_argument&) {
    throw error(errc::invalid_argument,
                "distortion key '" + key + "' is not of the form \"k,i\"");
  } catch (const std::out_of_range&) {
    throw error(errc::invalid_argument,
                "distortion key '" + key + "' is out of range");
  }
}

inline std::string node_key_to_string(const TreeIndex& n) {
  return std::to_string(n.k) + "," + std::to_string(n.i);
}

inline ProblemInstance instance_from_json(const nlohmann::json& j) {
  if (!j.contains("L") || !j.contains("sigma_x") || !j.contains("distortions")) {
    throw error(errc::invalid_argument,
                "instance requires \"L\", \"sigma_x\" and \"distortions\"");
  }
  ProblemInstance inst;
  inst.L = j.at("L").get<int>();
  if (inst.L < 2 || inst.L > 20) {
    throw error(errc::invalid_argument, "L must be between 2 and 20");
  }
  inst.sigma_x = matrix_from_json(j.at("sigma_x"), "sigma_x");
  inst.m = j.contains("m") ? j.at("m").get<int>()
                           : static_cast<int>(inst.sigma_x.dim());
  inst.distortions.assign(node_count(inst.L), inst.sigma_x);
  std::vector<bool> seen(node_count(inst.L), false);
  for (const auto& [key, val] : j.at("distortions").items()) {
    const TreeIndex n = node_key_from_string(key);
    if (n.k > inst.L) {
      throw error(errc::invalid_argument,
                  "distortion key '" + key + "' exceeds depth L=" +
                      std::to_string(inst.L));
    }
    inst.distortions[node_offset(n)] = matrix_from_json(val, "distortions " + key);
    seen[node_offset(n)] = true;
  }
  for (int off = 0; off < node_count(inst.L); ++off) {
    if (!seen[off]) {
      throw error(errc::invalid_argument,
                  "distortions: missing a matrix for one or more nodes (" +
                      std::to_string(node_count(inst.L)) + " required)");
    }
  }
  return inst;
}

inline nlohmann::json instance_to_json(const ProblemInstance& inst) {
  nlohmann::json j;
  j["m"] = inst.m;
  j["L"] = inst.L;
  j["sigma_x"] = matrix_to_json(inst.sigma_x);
  nlohmann::json d = nlohmann::json::object();
  for (int k = 1; k <= inst.L; ++k) {
    for (int i = 1; i <= level_width(k); ++i) {
      d[node_key_to_string({k, i})] = matrix_to_json(inst.distortion({k, i}));
    }
  }
  j["distortions"] = std::move(d);
  return j;
}

inline GeneralTreeSpec general_spec_from_json(const nlohmann::json& j) {
  if (!j.contains("M") || !j.contains("sigma_x") || !j.contains("constraints")) {
    throw error(errc::invalid_argument,
                "general spec requires \"M\", \"sigma_x\" and \"constraints\"");
  }
  GeneralTreeSpec spec;
  spec.M = j.at("M").get<int>();
  spec.sigma_x = matrix_from_json(j.at("sigma_x"), "sigma_x");
  spec.m = j.contains("m") ? j.at("m").get<int>()
                           : static_cast<int>(spec.sigma_x.dim());
  for (const auto& c : j.at("constraints")) {
    GeneralConstraint gc;
    if (!c.contains("subset") || !c.contains("d")) {
      throw error(errc::invalid_argument,
                  "each constraint requires \"subset\" and \"d\"");
    }
    gc.subset = c.at("subset").get<std::vector<int>>();
    gc.d = matrix_from_json(c.at("d"), "constraint d");
    spec.constraints.push_back(std::move(gc));
  }
  return spec;
}

// Either input format, distinguished by its keys.
using AnyInstance = std::variant<ProblemInstance, GeneralTreeSpec>;

inline AnyInstance any_instance_from_json(const nlohmann::json& j) {
  if (j.contains("distortions")) return instance_from_json(j);
  if (j.contains("constraints")) return general_spec_from_json(j);
  throw error(errc::invalid_argument,
              "input must contain either \"distortions\" (perfect tree) or "
              "\"constraints\" (general tree)");
}

}  // namespace mdtree
