#include "cli.hpp"

int main(int argc, char** argv) { return eve::cli::run(argc, argv); }
