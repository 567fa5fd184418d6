// Command-line entry point. A single run is just a 1x1x1 sweep; comma lists
// for --method / --lambda and --seeds N expand the grid.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "fbl/experiment.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);

  try {
    const fbl::RunSpec spec = fbl::parse_run_spec(args);
    const fbl::SweepSummary summary = fbl::run_sweep(spec);
    std::printf("%-10s %-8s %-6s %s\n", "method", "lambda", "seeds", "final accuracy");
    for (const fbl::SweepRow& row : summary.rows) {
      std::printf("%-10s %-8.2f %-6zu %s\n", fbl::to_string(row.method).c_str(), row.lambda,
                  row.num_seeds, row.cell.c_str());
    }
    std::printf("outputs: %s\n", spec.out_dir.c_str());
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
