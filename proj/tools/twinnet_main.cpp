#include "twinnet/commands.hpp"

int main(int argc, char** argv) {
  return twinnet::cli::main_entry(argc, argv);
}
