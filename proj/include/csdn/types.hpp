#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>

namespace csdn {

// Row-major so that row i of a feature matrix is contiguous (one sample / identity per row).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

enum class Modality : std::uint8_t { kVisible = 0, kInfrared = 1 };

std::string_view to_string(Modality m);
Modality parse_modality(std::string_view s);

}  // namespace csdn
