#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mec {

struct IdentityCheck {
  std::string name;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string note;  // extra context printed under the row
};

struct VerifyOptions {
  /// Mutation fixture: perturbs the first Taylor coefficient used by the
  /// first-order identity so that the suite must report a failure.
  bool corrupt_taylor_coefficient = false;
  int seeds = 50;
  int guard_batches = 1000;
};

std::vector<IdentityCheck> run_verify(const VerifyOptions& opts = {});
void print_verify_table(const std::vector<IdentityCheck>& checks, std::ostream& out);
bool all_pass(const std::vector<IdentityCheck>& checks);

}  // namespace mec
