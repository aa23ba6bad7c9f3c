#include <iostream>

#include "geofence/cli.hpp"

int main(int argc, char** argv) { return geofence::cli::main(argc, argv, std::cout, std::cerr); }
