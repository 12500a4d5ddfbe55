// Writes the built-in prompt templates as editable files for --templates.
#include <filesystem>
#include <fstream>
#include <iostream>

#include "tabval/tasks.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: write_templates <dir>\n";
    return 64;
  }
  const std::filesystem::path dir = argv[1];
  std::filesystem::create_directories(dir);
  for (const auto& [key, t] : tabval::TemplateSet::defaults().all()) {
    std::ofstream out(dir / (key + ".txt"), std::ios::binary);
    out << tabval::format_template_file(t);
  }
  return 0;
}
