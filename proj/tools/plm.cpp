#include "plm/cli.hpp"

int main(int argc, char** argv) { return plm::cli::main_entry(argc, argv); }
