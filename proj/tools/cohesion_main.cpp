#include "cohesion/cli.hpp"

int main(int argc, char** argv) { return cohesion::cli::dispatch(argc, argv); }
