#include "coupleface/cli.hpp"

int main(int argc, char** argv) { return coupleface::cli::run(argc, argv); }
