#include "fsfd_cli/commands.hpp"

int main(int argc, char** argv) { return fsfd::cli::run_cli(argc, argv); }
