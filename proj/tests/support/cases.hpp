#pragma once

#include <string>

#include "gridstate/grid.hpp"
#include "gridstate/io.hpp"

namespace gridstate::testing {

inline std::string data_path(const std::string& name) {
  return std::string(GRIDSTATE_DATA_DIR) + "/" + name;
}

inline GridCase two_bus_case(double g = 1.0, double b = -2.0,
                             double bs = 0.0) {
  std::vector<Bus> buses{{1, {0, 0}}, {2, {0, 0}}};
  std::vector<Branch> branches{{1, 2, {g, b}, bs, {1.0, 0.0}}};
  return GridCase(std::move(buses), std::move(branches), 1);
}

inline GridCase ieee14() { return load_case_file(data_path("ieee14.json")); }

inline GridCase radial6() { return load_case_file(data_path("radial6.json")); }

}  // namespace gridstate::testing
