/* Copyright 2026 The dhoi Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// dhoi_toyset: writes a rendered toy HOI dataset (PNGs + dataset.json).
#include <iostream>

#include "CLI11.hpp"
#include "dhoi/errors.hpp"
#include "dhoi/toyset.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Render a toy HOI dataset"};
  dhoi::ToyOptions opt;
  int count = 16;
  std::string out;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--count", count, "Number of images")->check(CLI::NonNegativeNumber);
  app.add_option("--size", opt.size, "Image side in pixels (multiple of 8)");
  app.add_option("--seed", opt.seed);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    std::cout << dhoi::write_toyset(dhoi::make_toyset(opt, count), out) << "\n";
  } catch (const dhoi::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  }
  return 0;
}
