#include "srl4h/cli/commands.hpp"

int main(int argc, char** argv) { return srl4h::cli::run_cli(argc, argv); }
