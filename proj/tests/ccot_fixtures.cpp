#include <iostream>

#include "CLI11.hpp"
#include "fixture_oracles.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Regenerate DERIVED golden fixtures from the independent oracles"};
  std::string dir = "fixtures";
  app.add_option("--dir", dir, "fixture directory");
  CLI11_PARSE(app, argc, argv);
  const int bad = fixtures::regenerate(dir, [](const std::string& s) { std::cout << s << '\n'; });
  return bad == 0 ? 0 : 1;
}
