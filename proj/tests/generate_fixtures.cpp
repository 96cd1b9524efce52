// Rewrites the scripted replay transcripts under tests/fixtures. Run after a
// deliberate change to prompt assets or the transcript key.
#include <iostream>

#include "support/scenarios.hpp"

int main(int argc, char** argv) {
  const std::filesystem::path root = argc > 1 ? argv[1] : fairscreen::testing::fixture_dir();
  try {
    fairscreen::testing::generate_fixtures(root);
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  std::cout << "fixtures written to " << root.string() << '\n';
  return 0;
}
