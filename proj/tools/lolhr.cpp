#include "lolhr/cli.hpp"

int main(int argc, char** argv) { return lolhr::cli::main_entry(argc, argv); }
