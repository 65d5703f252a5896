#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace brainalign {

inline constexpr const char* kToolVersion = "1.0.0";

// Row-major so flat buffers match the on-disk row-major float64 layout.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Invalid user-supplied configuration (bad hyperparameter, malformed spec).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A caller violated an API precondition.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// An on-disk artifact does not match its documented format.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A pipeline stage was invoked before its prerequisites exist.
struct MissingPrerequisiteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace brainalign
