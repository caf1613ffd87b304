#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

namespace nytune {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

// Exception hierarchy; the CLI maps these onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};
struct SingularError : NumericalError {
  SingularError(const std::string& what, double jitter)
      : NumericalError(what), final_jitter(jitter) {}
  double final_jitter;
};
struct DegenerateError : NumericalError {
  using NumericalError::NumericalError;
};
struct IoError : Error {
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

// Worker count used by block-parallel loops. Initialized from NYTUNE_THREADS.
int num_threads();
void set_num_threads(int t);

// Runs fn(b) for b in [0, nblocks). Work per block must not depend on the
// thread that executes it so that results are independent of num_threads().
void parallel_blocks(Index nblocks, const std::function<void(Index)>& fn);

}  // namespace nytune
