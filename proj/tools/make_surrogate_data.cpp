// Writes synthetic stand-ins for the gas, forest and anuran datasets under a root directory.
#include "eplff/surrogate.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Generate synthetic datasets in the published file layouts"};
  std::string root;
  std::uint64_t seed = 2024;
  app.add_option("root", root, "Output directory")->required();
  app.add_option("--seed", seed, "Generator seed");
  CLI11_PARSE(app, argc, argv);
  try {
    eplff::surrogate::write_all(root, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
