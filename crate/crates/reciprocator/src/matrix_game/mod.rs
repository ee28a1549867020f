//! Exact solution of two-player memory-1 iterated matrix games.
//!
//! A memory-1 policy conditions only on the previous round's joint action, so
//! a pair of such policies induces a Markov chain over the four joint outcomes.
//! Resolvent inversion of that chain gives closed-form discounted returns and
//! action values, and running the whole computation on dual numbers gives
//! exact policy gradients — including gradients through an opponent's own
//! learning step, which the lookahead learner needs.

pub mod dual;

pub use dual::{Dual, Scalar};

/// Joint outcomes per round: CC, CD, DC, DD from the row player's view.
pub const N_OUTCOMES: usize = 4;
/// Conditioning states for a memory-1 policy: start-of-episode plus the four
/// previous outcomes, each seen from the policy owner's own perspective.
pub const N_STATES: usize = 5;

/// One player's choice in a single round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Cooperate,
    Defect,
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Cooperate => 0,
            Action::Defect => 1,
        }
    }

    pub fn from_index(i: usize) -> Action {
        match i {
            0 => Action::Cooperate,
            _ => Action::Defect,
        }
    }
}

/// Index of a joint outcome in row-player perspective: `2 * own + other`
/// with cooperate = 0, so the order is CC, CD, DC, DD.
pub fn outcome_index(own: Action, other: Action) -> usize {
    2 * own.index() + other.index()
}

/// The same physical outcome re-indexed from the other player's perspective
/// (CD and DC trade places).
pub fn swap_outcome(o: usize) -> usize {
    [0, 2, 1, 3][o]
}

/// Convert a canonical (row-player-perspective) memory-1 state index into the
/// index `agent` uses for its own policy tables.
pub fn perspective_state_index(canonical: usize, agent: usize) -> usize {
    if agent == 0 || canonical == 0 {
        canonical
    } else {
        1 + swap_outcome(canonical - 1)
    }
}

/// What one player observes at the start of a round: nothing yet, or the
/// previous round's joint action with their own choice listed first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IpdState {
    Start,
    Prev(Action, Action),
}

impl IpdState {
    /// Index into per-state tables: start, then CC, CD, DC, DD.
    pub fn index(self) -> usize {
        match self {
            IpdState::Start => 0,
            IpdState::Prev(own, other) => 1 + outcome_index(own, other),
        }
    }

    pub fn from_index(i: usize) -> IpdState {
        match i {
            0 => IpdState::Start,
            _ => {
                let o = i - 1;
                IpdState::Prev(Action::from_index(o / 2), Action::from_index(o % 2))
            }
        }
    }
}

/// Per-outcome payoffs for both players, indexed CC, CD, DC, DD in the row
/// player's perspective.
#[derive(Clone, Copy, Debug)]
pub struct PayoffMatrix {
    pub own: [f64; 4],
    pub other: [f64; 4],
}

impl Default for PayoffMatrix {
    /// Standard prisoner's dilemma payoffs: mutual cooperation −1 each,
    /// unilateral defection 0 against −3, mutual defection −2 each.
    fn default() -> Self {
        PayoffMatrix {
            own: [-1.0, -3.0, 0.0, -2.0],
            other: [-1.0, 0.0, -3.0, -2.0],
        }
    }
}

impl PayoffMatrix {
    /// The same game with the players' roles exchanged.
    pub fn swapped(&self) -> PayoffMatrix {
        let mut own = [0.0; 4];
        let mut other = [0.0; 4];
        for o in 0..4 {
            own[o] = self.other[swap_outcome(o)];
            other[o] = self.own[swap_outcome(o)];
        }
        PayoffMatrix { own, other }
    }
}

/// A memory-1 policy as five cooperation logits, indexed by [`IpdState`] in
/// the owner's own perspective.
#[derive(Clone, Debug, PartialEq)]
pub struct Memory1Policy {
    pub logits: [f64; 5],
}

impl Memory1Policy {
    pub fn new(logits: [f64; 5]) -> Self {
        Memory1Policy { logits }
    }

    /// Cooperation probability in each of the five states.
    pub fn coop_probs(&self) -> [f64; 5] {
        self.logits.map(Scalar::sigmoid)
    }

    pub fn coop_prob(&self, state: IpdState) -> f64 {
        self.logits[state.index()].sigmoid()
    }

    /// Policy with the given per-state cooperation probabilities, clamped
    /// away from exact 0/1 so the logits stay finite.
    pub fn from_probs(probs: [f64; 5]) -> Self {
        let logits = probs.map(|p| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            (p / (1.0 - p)).ln()
        });
        Memory1Policy::new(logits)
    }

    /// Near-deterministic policy playing `action` everywhere.
    pub fn always(action: Action) -> Self {
        let l = match action {
            Action::Cooperate => SATURATED_LOGIT,
            Action::Defect => -SATURATED_LOGIT,
        };
        Memory1Policy::new([l; 5])
    }

    /// Near-deterministic tit-for-tat: open with cooperation, then copy the
    /// opponent's previous move.
    pub fn tit_for_tat() -> Self {
        let c = SATURATED_LOGIT;
        // States: start, CC, CD, DC, DD — cooperate unless the other defected.
        Memory1Policy::new([c, c, -c, c, -c])
    }
}

/// Logit magnitude at which the sigmoid is 1 or 0 to well past f64 precision
/// of the returns, while staying clear of exp overflow under nested duals.
const SATURATED_LOGIT: f64 = 40.0;

/// Start distribution over outcomes and the 4x4 round-to-round transition
/// matrix induced by two cooperation-probability tables (each indexed in its
/// owner's perspective; the column player's entries are re-indexed internally).
pub fn induced_chain<T: Scalar>(
    p1: &[T; N_STATES],
    p2: &[T; N_STATES],
) -> ([T; N_OUTCOMES], [[T; N_OUTCOMES]; N_OUTCOMES]) {
    let d0 = joint_row(p1[0], p2[0]);
    let mut m = [[T::zero(); N_OUTCOMES]; N_OUTCOMES];
    for (o, row) in m.iter_mut().enumerate() {
        let a = p1[1 + o];
        let b = p2[1 + swap_outcome(o)];
        *row = joint_row(a, b);
    }
    (d0, m)
}

/// Distribution over joint outcomes when the players cooperate independently
/// with probabilities `a` and `b`.
fn joint_row<T: Scalar>(a: T, b: T) -> [T; N_OUTCOMES] {
    let na = T::one() - a;
    let nb = T::one() - b;
    [a * b, a * nb, na * b, na * nb]
}

/// Solve `A x = b` by Gaussian elimination with partial pivoting. Pivots are
/// chosen on primal magnitudes, so the same elimination order is used at every
/// dual level and derivatives stay consistent.
fn solve_linear<T: Scalar, const N: usize>(mut a: [[T; N]; N], mut b: [T; N]) -> [T; N] {
    for col in 0..N {
        let pivot = (col..N)
            .max_by(|&i, &j| {
                let (x, y) = (a[i][col].value().abs(), a[j][col].value().abs());
                x.partial_cmp(&y).expect("non-NaN pivot")
            })
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            for k in col..N {
                a[row][k] = a[row][k] - f * a[col][k];
            }
            b[row] = b[row] - f * b[col];
        }
    }
    let mut x = [T::zero(); N];
    for row in (0..N).rev() {
        let mut acc = b[row];
        for k in row + 1..N {
            acc = acc - a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Closed-form solution of one policy pair: discounted returns and per-outcome
/// values, all normalized by `1 - gamma` to a per-round scale.
#[derive(Clone, Debug)]
pub struct GameSolution<T> {
    /// Expected per-round return of each player from the episode start.
    pub returns: [T; 2],
    /// `state_values[p][o]`: player `p`'s normalized discounted return when
    /// the current round ends in outcome `o` (reward of `o` included),
    /// indexed in row-player perspective.
    pub state_values: [[T; N_OUTCOMES]; 2],
}

impl<T: Scalar> GameSolution<T> {
    /// Normalized action value of a joint round action. The next outcome is
    /// fully determined by the joint action, so this does not depend on the
    /// round's starting state.
    pub fn q(&self, player: usize, row_action: Action, col_action: Action) -> T {
        self.state_values[player][outcome_index(row_action, col_action)]
    }
}

/// Solve the iterated game for cooperation logits `theta1` (row) and `theta2`
/// (column), each indexed in its owner's perspective.
pub fn solve_game<T: Scalar>(
    theta1: &[T; N_STATES],
    theta2: &[T; N_STATES],
    payoff: &PayoffMatrix,
    gamma: f64,
) -> GameSolution<T> {
    let p1 = theta1.map(Scalar::sigmoid);
    let p2 = theta2.map(Scalar::sigmoid);
    let (d0, m) = induced_chain(&p1, &p2);
    let g = T::from_f64(gamma);
    let norm = T::from_f64(1.0 - gamma);

    let mut solution = GameSolution {
        returns: [T::zero(); 2],
        state_values: [[T::zero(); N_OUTCOMES]; 2],
    };
    for (player, payoffs) in [&payoff.own, &payoff.other].into_iter().enumerate() {
        // v = (I - gamma * M)^-1 r, then scale to per-round units.
        let mut a = [[T::zero(); N_OUTCOMES]; N_OUTCOMES];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let eye = if i == j { T::one() } else { T::zero() };
                *cell = eye - g * m[i][j];
            }
        }
        let v = solve_linear(a, payoffs.map(T::from_f64));
        let vn = v.map(|x| norm * x);
        solution.state_values[player] = vn;
        solution.returns[player] = (0..N_OUTCOMES)
            .map(|o| d0[o] * vn[o])
            .fold(T::zero(), |acc, x| acc + x);
    }
    solution
}

/// Both players' normalized returns under the given logits.
pub fn exact_return(
    theta1: &[f64; N_STATES],
    theta2: &[f64; N_STATES],
    payoff: &PayoffMatrix,
    gamma: f64,
) -> [f64; 2] {
    solve_game(theta1, theta2, payoff, gamma).returns
}

/// Gradient of `player`'s normalized return with respect to that player's own
/// logits, with the opponent held fixed.
pub fn exact_gradient(
    theta1: &[f64; N_STATES],
    theta2: &[f64; N_STATES],
    payoff: &PayoffMatrix,
    gamma: f64,
    player: usize,
) -> [f64; N_STATES] {
    type D = Dual<f64, N_STATES>;
    let lift = |theta: &[f64; N_STATES], seeded: bool| -> [D; N_STATES] {
        std::array::from_fn(|k| {
            if seeded {
                D::seeded(theta[k], k)
            } else {
                D::from_f64(theta[k])
            }
        })
    };
    let t1 = lift(theta1, player == 0);
    let t2 = lift(theta2, player == 1);
    solve_game(&t1, &t2, payoff, gamma).returns[player].du
}

/// Gradient of the row player's return after the column player takes one
/// naive gradient step of size `alpha` on its own return — differentiated
/// through that step, so the row player shapes where the opponent will move.
///
/// The column player's lookahead gradient is obtained by calling this with the
/// arguments swapped and [`PayoffMatrix::swapped`].
pub fn lola_gradient(
    theta1: &[f64; N_STATES],
    theta2: &[f64; N_STATES],
    payoff: &PayoffMatrix,
    gamma: f64,
    alpha: f64,
) -> [f64; N_STATES] {
    type Outer = Dual<f64, N_STATES>;
    type Nested = Dual<Outer, N_STATES>;

    // Pass 1: opponent's own-return gradient, carrying d/dtheta1 in the outer
    // tangents so the step's dependence on our logits is retained.
    let t1: [Nested; N_STATES] = std::array::from_fn(|k| Nested::constant(Outer::seeded(theta1[k], k)));
    let t2: [Nested; N_STATES] = std::array::from_fn(|k| Nested::seeded(Outer::from_f64(theta2[k]), k));
    let j2 = solve_game(&t1, &t2, payoff, gamma).returns[1];

    // Pass 2: our return at the opponent's stepped logits.
    let a = Outer::from_f64(alpha);
    let t1: [Outer; N_STATES] = std::array::from_fn(|k| Outer::seeded(theta1[k], k));
    let t2: [Outer; N_STATES] = std::array::from_fn(|k| Outer::from_f64(theta2[k]) + a * j2.du[k]);
    solve_game(&t1, &t2, payoff, gamma).returns[0].du
}
