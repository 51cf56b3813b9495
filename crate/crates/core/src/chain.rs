//! The chain: a doubly linked list of tasks in creation order.
//!
//! Link topology lives behind the chain's erase guard. Every read or write of
//! a `prev`/`next`/head/tail link, every append and every splice happens while
//! that guard is held, so a worker holding it sees a consistent list. Nodes
//! are kept in a slab and addressed by slot; a slot is recycled once its task
//! is erased, which is why callers must check [`Task::phase`] under the guard
//! before following links from a task they did not hold.

use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Arc;

use parking_lot::{ArcMutexGuard, Mutex, MutexGuard, RawMutex};

pub type TaskId = u64;

/// Held by a worker located at a task, and by the eraser while splicing it.
pub type Occupancy = ArcMutexGuard<RawMutex, ()>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Phase {
    Pending = 0,
    Executing = 1,
    Erased = 2,
}

impl Phase {
    fn from_u8(v: u8) -> Phase {
        match v {
            0 => Phase::Pending,
            1 => Phase::Executing,
            _ => Phase::Erased,
        }
    }
}

pub struct Task<R> {
    id: TaskId,
    slot: usize,
    recipe: R,
    phase: AtomicU8,
    occupancy: Arc<Mutex<()>>,
}

impl<R> Task<R> {
    pub fn id(&self) -> TaskId {
        self.id
    }

    pub fn recipe(&self) -> &R {
        &self.recipe
    }

    pub fn phase(&self) -> Phase {
        Phase::from_u8(self.phase.load(Ordering::Acquire))
    }

    pub fn occupancy(&self) -> &Arc<Mutex<()>> {
        &self.occupancy
    }

    /// Pending → Executing. The caller must hold the task's occupancy guard,
    /// which makes it the only possible executor.
    pub fn begin_execution(&self, occ: &Occupancy) {
        debug_assert!(self.owns(occ));
        let prev = self.phase.swap(Phase::Executing as u8, Ordering::AcqRel);
        assert_eq!(
            Phase::from_u8(prev),
            Phase::Pending,
            "task {} started twice",
            self.id
        );
    }

    fn owns(&self, occ: &Occupancy) -> bool {
        Arc::ptr_eq(ArcMutexGuard::mutex(occ), &self.occupancy)
    }
}

impl<R: std::fmt::Debug> std::fmt::Debug for Task<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Task")
            .field("id", &self.id)
            .field("phase", &self.phase())
            .field("recipe", &self.recipe)
            .finish()
    }
}

struct Node<R> {
    task: Arc<Task<R>>,
    prev: Option<usize>,
    next: Option<usize>,
}

/// Link topology and lifecycle counters. Only reachable through
/// [`Chain::erase_guard`].
pub struct Links<R> {
    nodes: Vec<Option<Node<R>>>,
    free: Vec<usize>,
    head: Option<usize>,
    tail: Option<usize>,
    created: u64,
    erased: u64,
}

impl<R> Links<R> {
    fn new() -> Self {
        Links {
            nodes: Vec::new(),
            free: Vec::new(),
            head: None,
            tail: None,
            created: 0,
            erased: 0,
        }
    }

    fn node(&self, slot: usize) -> &Node<R> {
        self.nodes[slot].as_ref().expect("dangling chain slot")
    }

    fn node_mut(&mut self, slot: usize) -> &mut Node<R> {
        self.nodes[slot].as_mut().expect("dangling chain slot")
    }

    fn linked_slot(&self, task: &Task<R>) -> usize {
        assert_ne!(
            task.phase(),
            Phase::Erased,
            "task {} is no longer linked",
            task.id
        );
        debug_assert_eq!(self.node(task.slot).task.id, task.id);
        task.slot
    }

    /// Adds a new pending task at the tail. Its id is the number of tasks
    /// created before it.
    pub fn append(&mut self, recipe: R) -> Arc<Task<R>> {
        let slot = match self.free.pop() {
            Some(s) => s,
            None => {
                self.nodes.push(None);
                self.nodes.len() - 1
            }
        };
        let task = Arc::new(Task {
            id: self.created,
            slot,
            recipe,
            phase: AtomicU8::new(Phase::Pending as u8),
            occupancy: Arc::new(Mutex::new(())),
        });
        self.nodes[slot] = Some(Node {
            task: Arc::clone(&task),
            prev: self.tail,
            next: None,
        });
        match self.tail {
            Some(t) => self.node_mut(t).next = Some(slot),
            None => self.head = Some(slot),
        }
        self.tail = Some(slot);
        self.created += 1;
        task
    }

    /// Unlinks an executing task. The caller proves it holds the task's
    /// occupancy guard, so no worker is located on it.
    pub fn erase(&mut self, task: &Task<R>, occ: &Occupancy) {
        assert!(
            task.owns(occ),
            "erase without holding the task's occupancy guard"
        );
        let slot = self.linked_slot(task);
        debug_assert_eq!(task.phase(), Phase::Executing);
        let node = self.nodes[slot].take().expect("dangling chain slot");
        match node.prev {
            Some(p) => self.node_mut(p).next = node.next,
            None => self.head = node.next,
        }
        match node.next {
            Some(n) => self.node_mut(n).prev = node.prev,
            None => self.tail = node.prev,
        }
        task.phase.store(Phase::Erased as u8, Ordering::Release);
        self.free.push(slot);
        self.erased += 1;
    }

    pub fn head(&self) -> Option<Arc<Task<R>>> {
        self.head.map(|s| Arc::clone(&self.node(s).task))
    }

    pub fn tail(&self) -> Option<Arc<Task<R>>> {
        self.tail.map(|s| Arc::clone(&self.node(s).task))
    }

    /// Successor of a linked task.
    pub fn next_of(&self, task: &Task<R>) -> Option<Arc<Task<R>>> {
        let slot = self.linked_slot(task);
        self.node(slot).next.map(|s| Arc::clone(&self.node(s).task))
    }

    /// Predecessor of a linked task.
    pub fn prev_of(&self, task: &Task<R>) -> Option<Arc<Task<R>>> {
        let slot = self.linked_slot(task);
        self.node(slot).prev.map(|s| Arc::clone(&self.node(s).task))
    }

    pub fn is_empty(&self) -> bool {
        self.head.is_none()
    }

    pub fn len(&self) -> usize {
        (self.created - self.erased) as usize
    }

    pub fn created(&self) -> u64 {
        self.created
    }

    pub fn erased(&self) -> u64 {
        self.erased
    }

    /// Task ids from head to tail.
    pub fn ids(&self) -> Vec<TaskId> {
        let mut out = Vec::with_capacity(self.len());
        let mut cur = self.head;
        while let Some(s) = cur {
            let node = self.node(s);
            out.push(node.task.id);
            cur = node.next;
        }
        out
    }
}

/// The shared chain together with its two chain-level guards.
pub struct Chain<R> {
    links: Mutex<Links<R>>,
    enter: Mutex<()>,
}

impl<R> Default for Chain<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R> Chain<R> {
    pub fn new() -> Self {
        Chain {
            links: Mutex::new(Links::new()),
            enter: Mutex::new(()),
        }
    }

    /// The erase guard, which also covers every link access and append.
    pub fn erase_guard(&self) -> MutexGuard<'_, Links<R>> {
        self.links.lock()
    }

    pub(crate) fn links_mutex(&self) -> &Mutex<Links<R>> {
        &self.links
    }

    pub fn enter_guard(&self) -> MutexGuard<'_, ()> {
        self.enter.lock()
    }

    pub(crate) fn enter_mutex(&self) -> &Mutex<()> {
        &self.enter
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn execute_and_erase(links: &mut Links<u32>, task: &Arc<Task<u32>>) {
        let occ = task.occupancy().lock_arc();
        task.begin_execution(&occ);
        links.erase(task, &occ);
    }

    #[test]
    fn append_to_empty_chain() {
        let chain = Chain::new();
        let mut links = chain.erase_guard();
        let t = links.append(10u32);
        assert_eq!(t.id(), 0);
        assert_eq!(links.head().unwrap().id(), 0);
        assert_eq!(links.tail().unwrap().id(), 0);
        assert_eq!(t.phase(), Phase::Pending);
        assert_eq!(*t.recipe(), 10);
    }

    #[test]
    fn successive_appends_are_ordered() {
        let chain = Chain::new();
        let mut links = chain.erase_guard();
        for r in 0..3u32 {
            links.append(r);
        }
        assert_eq!(links.ids(), vec![0, 1, 2]);
        let mid = links.next_of(&links.head().unwrap()).unwrap();
        assert_eq!(mid.id(), 1);
        assert_eq!(links.prev_of(&mid).unwrap().id(), 0);
        assert_eq!(links.next_of(&mid).unwrap().id(), 2);
    }

    #[test]
    fn append_after_erasures_uses_creation_counter() {
        let chain = Chain::new();
        let mut links = chain.erase_guard();
        let tasks: Vec<_> = (0..8u32).map(|r| links.append(r)).collect();
        for t in &tasks[..5] {
            execute_and_erase(&mut links, t);
        }
        let t = links.append(99);
        assert_eq!(t.id(), 8);
        assert_eq!(links.len(), 4);
        assert_eq!(links.ids(), vec![5, 6, 7, 8]);
        assert_eq!((links.created(), links.erased()), (9, 5));
    }

    #[test]
    fn erase_sole_task_empties_chain() {
        let chain = Chain::new();
        let mut links = chain.erase_guard();
        let t = links.append(0u32);
        execute_and_erase(&mut links, &t);
        assert!(links.is_empty());
        assert!(links.head().is_none() && links.tail().is_none());
        assert_eq!(t.phase(), Phase::Erased);
        assert_eq!(links.len(), 0);
    }

    #[test]
    fn erase_middle_splices_neighbors() {
        let chain = Chain::new();
        let mut links = chain.erase_guard();
        let tasks: Vec<_> = (0..6u32).map(|r| links.append(r)).collect();
        for t in &tasks[..3] {
            execute_and_erase(&mut links, t);
        }
        assert_eq!(links.ids(), vec![3, 4, 5]);
        execute_and_erase(&mut links, &tasks[4]);
        assert_eq!(links.ids(), vec![3, 5]);
        assert_eq!(links.next_of(&tasks[3]).unwrap().id(), 5);
        assert_eq!(links.prev_of(&tasks[5]).unwrap().id(), 3);
        assert!(links.prev_of(&tasks[3]).is_none());
        assert!(links.next_of(&tasks[5]).is_none());
    }

    #[test]
    fn erasing_head_leaves_other_positions_alone() {
        let chain = Chain::new();
        let mut links = chain.erase_guard();
        let tasks: Vec<_> = (0..6u32).map(|r| links.append(r)).collect();
        // Another worker is located at task 5.
        let parked = tasks[5].occupancy().lock_arc();
        execute_and_erase(&mut links, &tasks[0]);
        assert_eq!(links.head().unwrap().id(), 1);
        assert_eq!(tasks[5].phase(), Phase::Pending);
        assert_eq!(links.prev_of(&tasks[5]).unwrap().id(), 4);
        drop(parked);
    }

    #[test]
    fn recycled_slots_keep_order() {
        let chain = Chain::new();
        let mut links = chain.erase_guard();
        let a = links.append(0u32);
        let b = links.append(1);
        execute_and_erase(&mut links, &a);
        let c = links.append(2);
        assert_eq!(links.ids(), vec![1, 2]);
        assert_eq!(links.next_of(&b).unwrap().id(), c.id());
    }

    #[test]
    #[should_panic(expected = "occupancy")]
    fn erase_requires_occupancy_of_that_task() {
        let chain = Chain::new();
        let mut links = chain.erase_guard();
        let a = links.append(0u32);
        let b = links.append(1);
        let occ_b = b.occupancy().lock_arc();
        links.erase(&a, &occ_b);
    }

    #[test]
    #[should_panic(expected = "started twice")]
    fn phase_never_goes_backwards() {
        let chain = Chain::new();
        let t = chain.erase_guard().append(0u32);
        let occ = t.occupancy().lock_arc();
        t.begin_execution(&occ);
        t.begin_execution(&occ);
    }
}
