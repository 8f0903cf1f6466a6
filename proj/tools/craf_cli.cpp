#include "craf/cli.hpp"

int main(int argc, char** argv) { return craf::cli::dispatch(argc, argv); }
