"""Heavy-atom bond graphs of the 20 standard amino acids (free acid form).

Atom names follow PDB conventions; an atom's element is the first letter of
its name. Hydrogens are implicit.
"""

BACKBONE = ("N-CA", "CA-C", "C-O", "C-OXT")

SIDE_CHAINS = {
    "G": (),
    "A": ("CA-CB",),
    "S": ("CA-CB", "CB-OG"),
    "C": ("CA-CB", "CB-SG"),
    "T": ("CA-CB", "CB-OG1", "CB-CG2"),
    "V": ("CA-CB", "CB-CG1", "CB-CG2"),
    "L": ("CA-CB", "CB-CG", "CG-CD1", "CG-CD2"),
    "I": ("CA-CB", "CB-CG1", "CB-CG2", "CG1-CD1"),
    "M": ("CA-CB", "CB-CG", "CG-SD", "SD-CE"),
    "P": ("CA-CB", "CB-CG", "CG-CD", "CD-N"),
    "F": ("CA-CB", "CB-CG", "CG-CD1", "CG-CD2", "CD1-CE1", "CD2-CE2", "CE1-CZ", "CE2-CZ"),
    "Y": ("CA-CB", "CB-CG", "CG-CD1", "CG-CD2", "CD1-CE1", "CD2-CE2", "CE1-CZ", "CE2-CZ", "CZ-OH"),
    "W": ("CA-CB", "CB-CG", "CG-CD1", "CG-CD2", "CD1-NE1", "NE1-CE2", "CD2-CE2", "CD2-CE3",
          "CE2-CZ2", "CE3-CZ3", "CZ2-CH2", "CZ3-CH2"),
    "H": ("CA-CB", "CB-CG", "CG-ND1", "CG-CD2", "ND1-CE1", "CE1-NE2", "CD2-NE2"),
    "K": ("CA-CB", "CB-CG", "CG-CD", "CD-CE", "CE-NZ"),
    "R": ("CA-CB", "CB-CG", "CG-CD", "CD-NE", "NE-CZ", "CZ-NH1", "CZ-NH2"),
    "D": ("CA-CB", "CB-CG", "CG-OD1", "CG-OD2"),
    "E": ("CA-CB", "CB-CG", "CG-CD", "CD-OE1", "CD-OE2"),
    "N": ("CA-CB", "CB-CG", "CG-OD1", "CG-ND2"),
    "Q": ("CA-CB", "CB-CG", "CG-CD", "CD-OE1", "CD-NE2"),
}


def bond_graph(residue: str) -> dict[str, set[str]]:
    """Adjacency sets keyed by atom name."""
    adj: dict[str, set[str]] = {}
    for bond in BACKBONE + SIDE_CHAINS[residue]:
        a, b = bond.split("-")
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    return adj
